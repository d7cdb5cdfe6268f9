//! BGP prefix table with longest-prefix match over a binary trie.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefixEntry {
    pub prefix: Ipv4Net,
    pub origin_asn: Option<u32>,
}

#[derive(Debug, Clone, Default)]
struct Node {
    children: [Option<u32>; 2],
    entry: Option<u32>,
}

/// Set of IPv4 prefixes supporting longest-prefix lookups.
///
/// Prefixes are stored with host bits cleared. Inserting a prefix that is
/// already present keeps one entry; a known origin AS wins over an unknown one.
#[derive(Debug, Clone)]
pub struct PrefixTable {
    entries: Vec<PrefixEntry>,
    nodes: Vec<Node>,
}

impl Default for PrefixTable {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            nodes: vec![Node::default()],
        }
    }
}

fn bit(addr: u32, depth: u8) -> usize {
    ((addr >> (31 - depth)) & 1) as usize
}

impl PrefixTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (Ipv4Net, Option<u32>)>) -> Self {
        let mut table = Self::new();
        for (prefix, asn) in entries {
            table.insert(prefix, asn);
        }
        table
    }

    pub fn insert(&mut self, prefix: Ipv4Net, origin_asn: Option<u32>) {
        let prefix = prefix.trunc();
        let addr = u32::from(prefix.network());
        let mut node = 0usize;
        for depth in 0..prefix.prefix_len() {
            let b = bit(addr, depth);
            node = match self.nodes[node].children[b] {
                Some(child) => child as usize,
                None => {
                    let child = self.nodes.len();
                    self.nodes.push(Node::default());
                    self.nodes[node].children[b] = Some(child as u32);
                    child
                }
            };
        }
        match self.nodes[node].entry {
            Some(existing) => {
                let existing = &mut self.entries[existing as usize];
                if existing.origin_asn.is_none() {
                    existing.origin_asn = origin_asn;
                }
            }
            None => {
                self.nodes[node].entry = Some(self.entries.len() as u32);
                self.entries.push(PrefixEntry { prefix, origin_asn });
            }
        }
    }

    /// Most specific entry containing `ip`.
    pub fn lookup(&self, ip: Ipv4Addr) -> Option<&PrefixEntry> {
        let addr = u32::from(ip);
        let mut node = &self.nodes[0];
        let mut best = node.entry;
        for depth in 0..32 {
            match node.children[bit(addr, depth)] {
                Some(child) => {
                    node = &self.nodes[child as usize];
                    if node.entry.is_some() {
                        best = node.entry;
                    }
                }
                None => break,
            }
        }
        best.map(|i| &self.entries[i as usize])
    }

    pub fn entries(&self) -> &[PrefixEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Parses one CIDR per line with an optional `,origin_asn`. Blank lines and
/// `#` comments are ignored.
pub fn parse_prefix_table<R: Read>(reader: R) -> Result<PrefixTable> {
    let mut collected: BTreeMap<Ipv4Net, Option<u32>> = BTreeMap::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (cidr, asn) = match line.split_once(',') {
            Some((cidr, asn)) => (cidr.trim(), Some(asn.trim())),
            None => (line, None),
        };
        let prefix: Ipv4Net = cidr
            .parse()
            .map_err(|e| Error::Format(format!("prefix line {}: {cidr:?}: {e}", n + 1)))?;
        let asn = match asn {
            Some("") | None => None,
            Some(a) => Some(
                a.parse::<u32>()
                    .map_err(|e| Error::Format(format!("prefix line {}: bad asn {a:?}: {e}", n + 1)))?,
            ),
        };
        let slot = collected.entry(prefix.trunc()).or_insert(None);
        if slot.is_none() {
            *slot = asn;
        }
    }
    Ok(PrefixTable::from_entries(collected))
}
