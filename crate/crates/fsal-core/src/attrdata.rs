//! Attribute matrices: ingestion of annotation files, train/test attribute
//! splits, and the canonical on-disk matrix format.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary items x attributes label table; the universe episodes are sampled
/// from.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeMatrix {
    item_ids: Vec<String>,
    attr_names: Vec<String>,
    labels: Vec<u8>, // row-major, n_items x n_attrs
}

impl AttributeMatrix {
    pub fn new(item_ids: Vec<String>, attr_names: Vec<String>, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != item_ids.len() * attr_names.len() {
            return Err(Error::Dimension(format!(
                "label table has {} entries, expected {}x{}",
                labels.len(),
                item_ids.len(),
                attr_names.len()
            )));
        }
        if let Some(v) = labels.iter().find(|&&v| v > 1) {
            return Err(Error::Validation(format!("labels must be 0/1, got {v}")));
        }
        let mut seen = HashSet::new();
        for id in &item_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate item id {id:?}")));
            }
        }
        let mut seen = HashSet::new();
        for name in &attr_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!("duplicate attribute {name:?}")));
            }
        }
        Ok(Self {
            item_ids,
            attr_names,
            labels,
        })
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_attrs(&self) -> usize {
        self.attr_names.len()
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn attr_names(&self) -> &[String] {
        &self.attr_names
    }

    #[inline]
    pub fn label(&self, item: usize, attr: usize) -> u8 {
        self.labels[item * self.attr_names.len() + attr]
    }

    /// Full attribute vector of one item.
    pub fn item_row(&self, item: usize) -> &[u8] {
        let a = self.attr_names.len();
        &self.labels[item * a..(item + 1) * a]
    }

    pub fn attr_index(&self, name: &str) -> Option<usize> {
        self.attr_names.iter().position(|n| n == name)
    }

    /// Count of positive items for one attribute.
    pub fn positives(&self, attr: usize) -> usize {
        (0..self.n_items()).filter(|&i| self.label(i, attr) == 1).count()
    }

    /// Attributes with fewer than `min_count` positives or negatives.
    ///
    /// These are flagged, not dropped; the episode sampler decides what is
    /// feasible for a given shot count.
    pub fn thin_attributes(&self, min_count: usize) -> Vec<usize> {
        (0..self.n_attrs())
            .filter(|&a| {
                let pos = self.positives(a);
                let neg = self.n_items() - pos;
                pos < min_count || neg < min_count
            })
            .collect()
    }

    /// New matrix with only the given attribute columns, in the given order.
    pub fn select_columns(&self, attrs: &[usize]) -> Result<AttributeMatrix> {
        let names = attrs
            .iter()
            .map(|&a| {
                self.attr_names
                    .get(a)
                    .cloned()
                    .ok_or_else(|| Error::Validation(format!("attribute index {a} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut labels = Vec::with_capacity(self.n_items() * attrs.len());
        for i in 0..self.n_items() {
            for &a in attrs {
                labels.push(self.label(i, a));
            }
        }
        AttributeMatrix::new(self.item_ids.clone(), names, labels)
    }
}

/// Disjoint train/test (and optional validation) attribute name lists bound
/// to a matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSplit {
    #[serde(rename = "train")]
    pub train_attrs: Vec<String>,
    #[serde(rename = "test")]
    pub test_attrs: Vec<String>,
    #[serde(rename = "val", default, skip_serializing_if = "Option::is_none")]
    pub val_attrs: Option<Vec<String>>,
}

impl AttributeSplit {
    pub fn validate(&self, matrix: &AttributeMatrix) -> Result<()> {
        let mut seen: HashSet<&str> = HashSet::new();
        let groups: [(&str, &[String]); 3] = [
            ("train", &self.train_attrs),
            ("test", &self.test_attrs),
            ("val", self.val_attrs.as_deref().unwrap_or(&[])),
        ];
        for (side, names) in groups {
            for name in names {
                if matrix.attr_index(name).is_none() {
                    return Err(Error::Validation(format!(
                        "{side} attribute {name:?} not present in matrix"
                    )));
                }
                if !seen.insert(name.as_str()) {
                    return Err(Error::Validation(format!(
                        "attribute {name:?} appears in more than one split side"
                    )));
                }
            }
        }
        if self.train_attrs.is_empty() || self.test_attrs.is_empty() {
            return Err(Error::Validation(
                "split must name at least one train and one test attribute".into(),
            ));
        }
        Ok(())
    }

    pub fn train_indices(&self, matrix: &AttributeMatrix) -> Vec<usize> {
        self.train_attrs
            .iter()
            .filter_map(|n| matrix.attr_index(n))
            .collect()
    }

    pub fn test_indices(&self, matrix: &AttributeMatrix) -> Vec<usize> {
        self.test_attrs
            .iter()
            .filter_map(|n| matrix.attr_index(n))
            .collect()
    }
}

/// Parse a split config (JSON with `train`/`test`/optional `val` name lists)
/// and validate it against the matrix.
pub fn load_split(path: &Path, matrix: &AttributeMatrix) -> Result<AttributeSplit> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let split = parse_split(&text)?;
    split.validate(matrix)?;
    Ok(split)
}

pub fn parse_split(text: &str) -> Result<AttributeSplit> {
    serde_json::from_str(text).map_err(|e| Error::Format(format!("split config: {e}")))
}

/// Attribute split configs shipped with the crate.
pub fn builtin_split_json(name: &str) -> Option<&'static str> {
    match name {
        "celeba" => Some(include_str!("../data/splits/celeba.json")),
        "zappos50k" => Some(include_str!("../data/splits/zappos50k.json")),
        "imagenet-attrs" => Some(include_str!("../data/splits/imagenet_attrs.json")),
        _ => None,
    }
}

/// Ingest the Celeb-A style annotation format.
///
/// Line 1: item count; line 2: attribute names; then one line per item with
/// the item id followed by one value in {-1, 1} per attribute. `-1` maps to 0.
/// With `selected_attrs`, columns are reduced to the listed names in the
/// listed order.
pub fn ingest_celeba(path: &Path, selected_attrs: Option<&[String]>) -> Result<AttributeMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    ingest_celeba_str(&text, selected_attrs)
}

pub fn ingest_celeba_str(
    text: &str,
    selected_attrs: Option<&[String]>,
) -> Result<AttributeMatrix> {
    let mut lines = text.lines().enumerate();
    let (_, count_line) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "missing item-count header".into() })?;
    let n_items: usize = count_line.trim().parse().map_err(|_| Error::Parse {
        line: 1,
        msg: format!("item count must be an integer, got {count_line:?}"),
    })?;
    let (_, names_line) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 2, msg: "missing attribute-name header".into() })?;
    let file_names: Vec<String> = names_line.split_whitespace().map(str::to_owned).collect();
    if file_names.is_empty() {
        return Err(Error::Parse { line: 2, msg: "no attribute names".into() });
    }

    // Column selection: listed order wins so table-driven configs come out in
    // table order.
    let keep: Vec<usize> = match selected_attrs {
        None => (0..file_names.len()).collect(),
        Some(sel) => sel
            .iter()
            .map(|name| {
                file_names.iter().position(|n| n == name).ok_or_else(|| Error::Parse {
                    line: 2,
                    msg: format!("selected attribute {name:?} not in file"),
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let attr_names: Vec<String> = keep.iter().map(|&i| file_names[i].clone()).collect();

    let mut item_ids = Vec::with_capacity(n_items);
    let mut labels = Vec::with_capacity(n_items * keep.len());
    let mut row_values = vec![0u8; file_names.len()];
    let mut parsed_rows = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let id = fields.next().ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "empty row".into(),
        })?;
        let mut n_vals = 0usize;
        for field in fields {
            if n_vals >= file_names.len() {
                n_vals += 1;
                break;
            }
            row_values[n_vals] = match field {
                "1" => 1,
                "-1" => 0,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("value must be -1 or 1, got {other:?}"),
                    })
                }
            };
            n_vals += 1;
        }
        if n_vals != file_names.len() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} values, found {n_vals}", file_names.len()),
            });
        }
        item_ids.push(id.to_owned());
        labels.extend(keep.iter().map(|&c| row_values[c]));
        parsed_rows += 1;
    }
    if parsed_rows != n_items {
        return Err(Error::Parse {
            line: parsed_rows + 2,
            msg: format!("header promised {n_items} items, found {parsed_rows}"),
        });
    }
    AttributeMatrix::new(item_ids, attr_names, labels)
}

/// Ingest a long-format CSV with header `item_id,attribute,value`.
///
/// Absent (item, attribute) pairs default to 0; rows and columns follow first
/// appearance in the file.
pub fn ingest_long_csv(path: &Path) -> Result<AttributeMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    ingest_long_csv_str(&text)
}

pub fn ingest_long_csv_str(text: &str) -> Result<AttributeMatrix> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty file".into() })?;
    if header.trim() != "item_id,attribute,value" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header item_id,attribute,value, got {header:?}"),
        });
    }
    let mut item_ids: Vec<String> = Vec::new();
    let mut attr_names: Vec<String> = Vec::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();
    let mut attr_index: HashMap<String, usize> = HashMap::new();
    // (item, attr) -> (value, first line)
    let mut cells: HashMap<(usize, usize), (u8, usize)> = HashMap::new();

    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let value = match fields[2].trim() {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("value must be 0 or 1, got {other:?}"),
                })
            }
        };
        let item = *item_index.entry(fields[0].to_owned()).or_insert_with(|| {
            item_ids.push(fields[0].to_owned());
            item_ids.len() - 1
        });
        let attr = *attr_index.entry(fields[1].to_owned()).or_insert_with(|| {
            attr_names.push(fields[1].to_owned());
            attr_names.len() - 1
        });
        match cells.get(&(item, attr)) {
            Some(&(prev, prev_line)) if prev != value => {
                return Err(Error::Conflict {
                    line: line_no,
                    msg: format!(
                        "({},{}) already set to {prev} at line {prev_line}",
                        fields[0], fields[1]
                    ),
                });
            }
            _ => {
                cells.insert((item, attr), (value, line_no));
            }
        }
    }
    if item_ids.is_empty() || attr_names.is_empty() {
        return Err(Error::Parse { line: 1, msg: "no data rows".into() });
    }
    let mut labels = vec![0u8; item_ids.len() * attr_names.len()];
    for ((item, attr), (value, _)) in cells {
        labels[item * attr_names.len() + attr] = value;
    }
    AttributeMatrix::new(item_ids, attr_names, labels)
}

// --- canonical matrix format -------------------------------------------------

const ATTR_MAGIC: &str = "FSAL-ATTR v1";

/// Serialize to the canonical text format.
///
/// Header, tab-separated attribute names, one row per item, then a trailing
/// CRC32 line over all preceding bytes.
pub fn write_matrix(matrix: &AttributeMatrix, path: &Path) -> Result<()> {
    let body = render_matrix(matrix)?;
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn render_matrix(matrix: &AttributeMatrix) -> Result<String> {
    if matrix.n_items() == 0 || matrix.n_attrs() == 0 {
        return Err(Error::Validation(
            "refusing to write an empty attribute matrix".into(),
        ));
    }
    for id in matrix.item_ids() {
        if id.chars().any(char::is_whitespace) || id.is_empty() {
            return Err(Error::Format(format!(
                "item id {id:?} must be non-empty and whitespace-free"
            )));
        }
    }
    for name in matrix.attr_names() {
        if name.contains('\t') || name.contains('\n') || name.is_empty() {
            return Err(Error::Format(format!(
                "attribute name {name:?} must be non-empty and tab/newline-free"
            )));
        }
    }
    let mut out = String::new();
    writeln!(out, "{ATTR_MAGIC} {} {}", matrix.n_items(), matrix.n_attrs()).unwrap();
    writeln!(out, "{}", matrix.attr_names().join("\t")).unwrap();
    for i in 0..matrix.n_items() {
        out.push_str(&matrix.item_ids()[i]);
        for a in 0..matrix.n_attrs() {
            out.push(' ');
            out.push(if matrix.label(i, a) == 1 { '1' } else { '0' });
        }
        out.push('\n');
    }
    let crc = crc32(out.as_bytes());
    writeln!(out, "CRC32 {crc:08x}").unwrap();
    Ok(out)
}

pub fn read_matrix(path: &Path) -> Result<AttributeMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_matrix(&text)
}

pub fn parse_matrix(text: &str) -> Result<AttributeMatrix> {
    let crc_pos = text
        .trim_end_matches('\n')
        .rfind("CRC32 ")
        .ok_or_else(|| Error::Format("missing CRC32 trailer".into()))?;
    let (body, trailer) = text.split_at(crc_pos);
    let stated = trailer
        .trim()
        .strip_prefix("CRC32 ")
        .and_then(|h| u32::from_str_radix(h.trim(), 16).ok())
        .ok_or_else(|| Error::Format("malformed CRC32 trailer".into()))?;
    let actual = crc32(body.as_bytes());
    if stated != actual {
        return Err(Error::Format(format!(
            "checksum mismatch: stated {stated:08x}, computed {actual:08x}"
        )));
    }

    let mut lines = body.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty matrix file".into()))?;
    let rest = header
        .strip_prefix(ATTR_MAGIC)
        .ok_or_else(|| Error::Format(format!("bad magic/version in {header:?}")))?;
    let dims: Vec<usize> = rest
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format("bad dimensions in header".into()))?;
    if dims.len() != 2 {
        return Err(Error::Format("header must state n_items n_attrs".into()));
    }
    let (n_items, n_attrs) = (dims[0], dims[1]);
    let names_line = lines
        .next()
        .ok_or_else(|| Error::Format("missing attribute-name line".into()))?;
    let attr_names: Vec<String> = names_line.split('\t').map(str::to_owned).collect();
    if attr_names.len() != n_attrs {
        return Err(Error::Format(format!(
            "expected {n_attrs} attribute names, found {}",
            attr_names.len()
        )));
    }
    let mut item_ids = Vec::with_capacity(n_items);
    let mut labels = Vec::with_capacity(n_items * n_attrs);
    for line in lines {
        let mut fields = line.split(' ');
        let id = fields
            .next()
            .ok_or_else(|| Error::Format("empty item row".into()))?;
        item_ids.push(id.to_owned());
        for field in fields {
            match field {
                "0" => labels.push(0),
                "1" => labels.push(1),
                other => return Err(Error::Format(format!("bad label {other:?}"))),
            }
        }
    }
    if item_ids.len() != n_items {
        return Err(Error::Format(format!(
            "expected {n_items} item rows, found {}",
            item_ids.len()
        )));
    }
    AttributeMatrix::new(item_ids, attr_names, labels)
}

/// CRC-32 (IEEE 802.3), bitwise implementation.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xedb8_8320 & mask);
        }
    }
    !crc
}
