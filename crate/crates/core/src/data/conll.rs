use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{SlotSchema, Utterance};
use crate::error::{Error, Result};

const DOMAIN_HEADER: &str = "# domain:";

/// Parses CoNLL-style `token<TAB>tag` lines. Blank lines separate
/// utterances. A `# domain: NAME` line switches the domain of the utterances
/// that follow; other lines starting with `#` and holding no tab are comments.
pub fn parse_conll_str(text: &str, default_domain: &str, path: &Path) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    let mut domain = default_domain.to_string();
    let mut counters: BTreeMap<String, usize> = BTreeMap::new();
    let mut pending: Vec<(String, String)> = Vec::new();
    let mut pending_start = 0;

    let mut flush = |pending: &mut Vec<(String, String)>,
                     domain: &str,
                     line: usize,
                     out: &mut Vec<Utterance>|
     -> Result<()> {
        if pending.is_empty() {
            return Ok(());
        }
        let n = counters.entry(domain.to_string()).or_insert(0);
        let id = format!("{domain}:{n}");
        *n += 1;
        let utt = Utterance::from_tagged(id, domain, pending).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        })?;
        out.push(utt);
        pending.clear();
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut pending, &domain, pending_start, &mut out)?;
            continue;
        }
        if line.starts_with('#') && !line.contains('\t') {
            if let Some(name) = line.strip_prefix(DOMAIN_HEADER) {
                flush(&mut pending, &domain, pending_start, &mut out)?;
                let name = name.trim();
                if name.is_empty() {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line_no,
                        msg: "empty domain name in header".into(),
                    });
                }
                domain = name.to_string();
            }
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(token), Some(tag), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("expected `token<TAB>tag`, got `{line}`"),
            });
        };
        if token.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: "empty token".into(),
            });
        }
        // Validate the tag eagerly so the error points at its own line.
        if let Err(msg) = Utterance::from_tagged("", "", &[(token.into(), tag.into())]) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg,
            });
        }
        if pending.is_empty() {
            pending_start = line_no;
        }
        pending.push((token.to_string(), tag.to_string()));
    }
    flush(&mut pending, &domain, pending_start, &mut out)?;
    Ok(out)
}

/// Reads one CoNLL file. The file stem is the default domain name.
pub fn parse_conll(path: &Path) -> Result<Vec<Utterance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("default");
    parse_conll_str(&text, stem, path)
}

/// Serializes utterances back to the CoNLL format, with a domain header
/// whenever the domain changes.
pub fn write_conll(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    let mut current: Option<&str> = None;
    for u in utterances {
        if current != Some(u.domain.as_str()) {
            out.push_str(&format!("{DOMAIN_HEADER} {}\n", u.domain));
            current = Some(&u.domain);
        }
        for (i, tok) in u.tokens.iter().enumerate() {
            out.push_str(tok);
            out.push('\t');
            out.push_str(&u.tag_string(i));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// All utterances of a corpus directory plus the schema derived from them.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub schema: SlotSchema,
}

impl Corpus {
    pub fn from_utterances(utterances: Vec<Utterance>) -> Result<Self> {
        let schema = SlotSchema::from_utterances(&utterances)?;
        Ok(Corpus { utterances, schema })
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.utterances.iter().position(|u| u.id == id)
    }
}

/// Loads every `*.conll` file of `dir` (sorted by file name).
pub fn load_corpus_dir(dir: &Path) -> Result<Corpus> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|x| x.to_str()) == Some("conll"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no .conll files found in {}",
            dir.display()
        )));
    }
    let mut utterances = Vec::new();
    for f in &files {
        utterances.extend(parse_conll(f)?);
    }
    Corpus::from_utterances(utterances)
}
