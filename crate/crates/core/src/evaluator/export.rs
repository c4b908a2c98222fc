use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::classifier::{Block, PrototypeMatrix};
use crate::error::{Error, Result};

/// Tab-separated rows `label, block, v_1 .. v_d` in layout order. Floats use
/// the shortest representation that parses back to the same bits.
pub fn prototypes_tsv(protos: &PrototypeMatrix) -> String {
    let mut out = String::new();
    for (r, (label, block)) in protos.layout.rows().iter().enumerate() {
        let _ = write!(out, "{label}\t{block}");
        for v in protos.row(r) {
            let _ = write!(out, "\t{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn export_prototypes(protos: &PrototypeMatrix, path: &Path) -> Result<()> {
    fs::write(path, prototypes_tsv(protos)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExportedPrototype {
    pub label: String,
    pub block: Block,
    pub values: Vec<f64>,
}

pub fn parse_prototypes_tsv(text: &str) -> Result<Vec<ExportedPrototype>> {
    let bad = |line: usize, msg: String| Error::Parse {
        path: "<prototypes>".into(),
        line,
        msg,
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut cols = line.split('\t');
        let label = cols.next().filter(|s| !s.is_empty()).ok_or_else(|| bad(i + 1, "missing label".into()))?;
        let block: Block = cols
            .next()
            .ok_or_else(|| bad(i + 1, "missing block".into()))?
            .parse()
            .map_err(|e| bad(i + 1, format!("{e}")))?;
        let values = cols
            .map(|c| c.parse::<f64>().map_err(|e| bad(i + 1, format!("`{c}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(ExportedPrototype {
            label: label.to_string(),
            block,
            values,
        });
    }
    Ok(rows)
}
