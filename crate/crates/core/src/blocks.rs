//! Unicode block table ingestion and codepoint lookup.
//!
//! The table is read from the UCD `Blocks.txt` format. Every codepoint maps to
//! exactly one index: named blocks occupy `0..len()`, and codepoints that fall
//! in no named range map to the `No_Block` pseudo-index `len()`.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const MAX_CODEPOINT: u32 = 0x10FFFF;
pub const NO_BLOCK_NAME: &str = "No_Block";

const BUILTIN_BLOCKS: &str = include_str!("../data/Blocks-12.0.0.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockRange {
    pub start: u32,
    pub end: u32,
    pub name: String,
}

impl BlockRange {
    pub fn contains(&self, cp: u32) -> bool {
        self.start <= cp && cp <= self.end
    }
}

/// Immutable, sorted set of named block ranges.
#[derive(Debug, Clone)]
pub struct BlockTable {
    ranges: Vec<BlockRange>,
    by_name: HashMap<String, usize>,
    version: Option<String>,
}

impl BlockTable {
    /// The Unicode 12.0 table shipped with the crate.
    pub fn builtin() -> &'static BlockTable {
        static TABLE: OnceLock<BlockTable> = OnceLock::new();
        TABLE.get_or_init(|| BlockTable::parse(BUILTIN_BLOCKS).expect("bundled Blocks.txt is valid"))
    }

    /// Parse the contents of a UCD `Blocks.txt` file.
    pub fn parse(text: &str) -> Result<Self> {
        let mut ranges = Vec::new();
        let mut version = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let (content, comment) = match raw.find('#') {
                Some(pos) => (&raw[..pos], Some(&raw[pos + 1..])),
                None => (raw, None),
            };
            if version.is_none() {
                if let Some(v) = comment.and_then(parse_version_comment) {
                    version = Some(v);
                }
            }
            let content = content.trim();
            if content.is_empty() {
                continue;
            }
            ranges.push(parse_range_line(content, line_no)?);
        }
        Self::from_ranges(ranges, version)
    }

    /// Build a table from explicit ranges. Ranges are sorted by start and
    /// must be pairwise disjoint with unique names.
    pub fn from_ranges(mut ranges: Vec<BlockRange>, version: Option<String>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::InvalidTable("no blocks defined".into()));
        }
        ranges.sort_by_key(|r| r.start);
        for pair in ranges.windows(2) {
            if pair[1].start <= pair[0].end {
                return Err(Error::InvalidTable(format!(
                    "{:04X}..{:04X} ({}) overlaps {:04X}..{:04X} ({})",
                    pair[0].start, pair[0].end, pair[0].name, pair[1].start, pair[1].end, pair[1].name
                )));
            }
        }
        let mut by_name = HashMap::with_capacity(ranges.len());
        for (i, r) in ranges.iter().enumerate() {
            if r.start > r.end || r.end > MAX_CODEPOINT {
                return Err(Error::InvalidTable(format!(
                    "invalid range {:04X}..{:04X} ({})",
                    r.start, r.end, r.name
                )));
            }
            if r.name == NO_BLOCK_NAME || by_name.insert(r.name.clone(), i).is_some() {
                return Err(Error::InvalidTable(format!("duplicate block name {:?}", r.name)));
            }
        }
        Ok(BlockTable { ranges, by_name, version })
    }

    /// Number of named blocks.
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Length of a full count vector: named blocks plus the `No_Block` slot.
    pub fn dim(&self) -> usize {
        self.ranges.len() + 1
    }

    pub fn no_block(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[BlockRange] {
        &self.ranges
    }

    /// Version string from the `# Blocks-X.Y.Z.txt` header, if present.
    pub fn version(&self) -> Option<&str> {
        self.version.as_deref()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        if index == self.no_block() {
            Some(NO_BLOCK_NAME)
        } else {
            self.ranges.get(index).map(|r| r.name.as_str())
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        if name == NO_BLOCK_NAME {
            Some(self.no_block())
        } else {
            self.by_name.get(name).copied()
        }
    }

    /// Block index of a codepoint.
    pub fn block_of(&self, cp: u32) -> Result<usize> {
        if cp > MAX_CODEPOINT {
            return Err(Error::CodepointOutOfRange(cp));
        }
        Ok(self.lookup(cp))
    }

    /// Block index of a character. Infallible since every `char` is a valid
    /// codepoint.
    pub fn block_of_char(&self, c: char) -> usize {
        self.lookup(c as u32)
    }

    fn lookup(&self, cp: u32) -> usize {
        // first range whose end is >= cp
        let i = self.ranges.partition_point(|r| r.end < cp);
        match self.ranges.get(i) {
            Some(r) if r.start <= cp => i,
            _ => self.no_block(),
        }
    }
}

fn parse_version_comment(comment: &str) -> Option<String> {
    let rest = comment.trim().strip_prefix("Blocks-")?;
    let v = rest.strip_suffix(".txt")?;
    (!v.is_empty()).then(|| v.to_string())
}

fn parse_range_line(content: &str, line: usize) -> Result<BlockRange> {
    let err = |message: String| Error::Parse { line, message };
    let (range, name) = content
        .split_once(';')
        .ok_or_else(|| err(format!("expected `XXXX..YYYY; Name`, got {content:?}")))?;
    let name = name.trim();
    if name.is_empty() {
        return Err(err("missing block name".into()));
    }
    let (lo, hi) = range
        .trim()
        .split_once("..")
        .ok_or_else(|| err(format!("expected `XXXX..YYYY`, got {:?}", range.trim())))?;
    let parse_cp = |s: &str| {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(err(format!("invalid codepoint {s:?}")));
        }
        u32::from_str_radix(s, 16).map_err(|e| err(format!("invalid codepoint {s:?}: {e}")))
    };
    let start = parse_cp(lo)?;
    let end = parse_cp(hi)?;
    if start > end {
        return Err(err(format!("range start {start:04X} exceeds end {end:04X}")));
    }
    if end > MAX_CODEPOINT {
        return Err(err(format!("codepoint {end:04X} beyond U+10FFFF")));
    }
    Ok(BlockRange {
        start,
        end,
        name: name.to_string(),
    })
}
