//! Endpoint features: AS number and geolocation for matrix rows and columns.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::net::Ipv4Addr;
use std::str::FromStr;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prefix::PrefixTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Continent {
    AF,
    AS,
    EU,
    NA,
    OC,
    SA,
    AN,
}

impl Continent {
    pub fn code(self) -> &'static str {
        match self {
            Continent::AF => "AF",
            Continent::AS => "AS",
            Continent::EU => "EU",
            Continent::NA => "NA",
            Continent::OC => "OC",
            Continent::SA => "SA",
            Continent::AN => "AN",
        }
    }
}

impl fmt::Display for Continent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Continent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "AF" => Continent::AF,
            "AS" => Continent::AS,
            "EU" => Continent::EU,
            "NA" => Continent::NA,
            "OC" => Continent::OC,
            "SA" => Continent::SA,
            "AN" => Continent::AN,
            other => return Err(Error::Format(format!("unknown continent code {other:?}"))),
        })
    }
}

// ISO-3166 alpha-2 codes by continent. Transcontinental countries are filed
// under the continent used by common geolocation feeds.
const COUNTRIES: &[(Continent, &str)] = &[
    (
        Continent::AF,
        "AO BF BI BJ BW CD CF CG CI CM CV DJ DZ EG EH ER ET GA GH GM GN GQ GW KE KM LR LS LY MA MG \
         ML MR MU MW MZ NA NE NG RE RW SC SD SH SL SN SO SS ST SZ TD TG TN TZ UG YT ZA ZM ZW",
    ),
    (
        Continent::AS,
        "AE AF AM AZ BD BH BN BT CC CN CX CY GE HK ID IL IN IO IQ IR JO JP KG KH KP KR KW KZ LA LB \
         LK MM MN MO MV MY NP OM PH PK PS QA SA SG SY TH TJ TL TM TR TW UZ VN YE",
    ),
    (
        Continent::EU,
        "AD AL AT AX BA BE BG BY CH CZ DE DK EE ES FI FO FR GB GG GI GR HR HU IE IM IS IT JE LI LT \
         LU LV MC MD ME MK MT NL NO PL PT RO RS RU SE SI SJ SK SM UA VA XK",
    ),
    (
        Continent::NA,
        "AG AI AW BB BL BM BQ BS BZ CA CR CU CW DM DO GD GL GP GT HN HT JM KN KY LC MF MQ MS MX NI \
         PA PM PR SV SX TC TT US VC VG VI",
    ),
    (
        Continent::OC,
        "AS AU CK FJ FM GU KI MH MP NC NF NR NU NZ PF PG PN PW SB TK TO TV UM VU WF WS",
    ),
    (
        Continent::SA,
        "AR BO BR CL CO EC FK GF GY PE PY SR UY VE",
    ),
    (Continent::AN, "AQ BV GS HM TF"),
];

/// Looks up the continent of an ISO-3166 alpha-2 country code.
pub fn continent_of(country: &str) -> Option<Continent> {
    let code = country.trim().to_ascii_uppercase();
    COUNTRIES.iter().find_map(|(continent, codes)| {
        codes
            .split_ascii_whitespace()
            .any(|c| c == code)
            .then_some(*continent)
    })
}

/// Feature tuple for one source node or destination.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EndpointTag {
    pub asn: u32,
    pub city: String,
    pub country: String,
    pub continent: Continent,
}

impl EndpointTag {
    /// Builds a tag, checking the country code against the continent table.
    pub fn new(asn: u32, city: &str, country: &str, continent: Continent) -> Result<Self> {
        if asn == 0 {
            return Err(Error::Format("ASN must be positive".into()));
        }
        let country = country.trim().to_ascii_uppercase();
        match continent_of(&country) {
            Some(c) if c == continent => {}
            Some(c) => {
                return Err(Error::Format(format!(
                    "country {country} belongs to {c}, not {continent}"
                )))
            }
            None => return Err(Error::Format(format!("unknown country code {country:?}"))),
        }
        Ok(Self {
            asn,
            city: city.trim().to_string(),
            country,
            continent,
        })
    }

    /// The (AS, city) donor/feature key.
    pub fn as_city(&self) -> (u32, &str) {
        (self.asn, self.city.as_str())
    }
}

/// A row or column label: its identifier plus optional endpoint features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisLabel {
    pub id: String,
    pub tag: Option<EndpointTag>,
}

impl AxisLabel {
    pub fn new(id: impl Into<String>, tag: Option<EndpointTag>) -> Self {
        Self { id: id.into(), tag }
    }
}

fn parse_tag_rows<R: Read>(reader: R, key_column: &str) -> Result<Vec<(String, EndpointTag)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let expected = [key_column, "asn", "city", "country", "continent"];
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Format(format!(
            "expected header {:?}, found {:?}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let context = |e: Error| Error::Format(format!("tag row {}: {e}", line + 2));
        let asn = row[1]
            .parse::<u32>()
            .map_err(|e| Error::Format(format!("tag row {}: bad asn: {e}", line + 2)))?;
        let continent = row[4].parse::<Continent>().map_err(context)?;
        let tag = EndpointTag::new(asn, &row[2], &row[3], continent).map_err(context)?;
        out.push((row[0].to_string(), tag));
    }
    Ok(out)
}

/// Parses a `source_id,asn,city,country,continent` file.
pub fn parse_source_tags<R: Read>(reader: R) -> Result<BTreeMap<String, EndpointTag>> {
    Ok(parse_tag_rows(reader, "source_id")?.into_iter().collect())
}

/// Destination features keyed by prefix or by individual IP.
///
/// Lookups try the exact id first; an IP that has no entry of its own
/// inherits the tag of the longest tagged prefix containing it.
#[derive(Debug, Clone, Default)]
pub struct DestinationTags {
    exact: BTreeMap<String, EndpointTag>,
    prefixes: PrefixTable,
    by_prefix: BTreeMap<Ipv4Net, EndpointTag>,
}

impl DestinationTags {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, EndpointTag)>) -> Self {
        let mut exact = BTreeMap::new();
        let mut by_prefix = BTreeMap::new();
        for (key, tag) in entries {
            if let Ok(net) = key.parse::<Ipv4Net>() {
                by_prefix.insert(net.trunc(), tag.clone());
            }
            exact.insert(key, tag);
        }
        let prefixes = PrefixTable::from_entries(by_prefix.keys().map(|n| (*n, None)));
        Self {
            exact,
            prefixes,
            by_prefix,
        }
    }

    pub fn get(&self, id: &str) -> Option<&EndpointTag> {
        if let Some(tag) = self.exact.get(id) {
            return Some(tag);
        }
        if let Ok(net) = id.parse::<Ipv4Net>() {
            return self.by_prefix.get(&net.trunc());
        }
        let ip = id.parse::<Ipv4Addr>().ok()?;
        let entry = self.prefixes.lookup(ip)?;
        self.by_prefix.get(&entry.prefix)
    }

    pub fn len(&self) -> usize {
        self.exact.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exact.is_empty()
    }
}

/// Parses a `prefix_or_ip,asn,city,country,continent` file.
pub fn parse_destination_tags<R: Read>(reader: R) -> Result<DestinationTags> {
    Ok(DestinationTags::from_entries(parse_tag_rows(
        reader,
        "prefix_or_ip",
    )?))
}

/// Writes labels in the `id,asn,city,country,continent` layout. Untagged
/// labels are skipped.
pub fn write_tags<W: std::io::Write>(
    writer: W,
    key_column: &str,
    labels: &[AxisLabel],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([key_column, "asn", "city", "country", "continent"])?;
    for label in labels {
        if let Some(tag) = &label.tag {
            wtr.write_record([
                label.id.as_str(),
                &tag.asn.to_string(),
                &tag.city,
                &tag.country,
                tag.continent.code(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
