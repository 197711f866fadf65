//! CoNLL-2009 reader and writer.
//!
//! Columns: ID FORM LEMMA PLEMMA POS PPOS FEAT PFEAT HEAD PHEAD DEPREL
//! PDEPREL FILLPRED PRED APRED_1..APRED_N. The k-th row with FILLPRED `Y`
//! owns APRED column k.

use std::fmt::Write as _;
use std::path::Path;

use super::{CorpusError, SemanticGraph, Sentence, Token};

const FIXED_COLUMNS: usize = 14;
/// LEMMA..PDEPREL
const MORPH_COLUMNS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadMode {
    /// Predicates, senses and arcs come from the file.
    GoldPredicates,
    /// Only tokens are kept; predicates must be identified later.
    Raw,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReadStats {
    pub sentences: usize,
    pub tokens: usize,
    /// Arcs whose head and dependent coincide; these are not representable
    /// and are skipped.
    pub self_loops_dropped: usize,
}

pub fn read_conll09(path: &Path, mode: ReadMode) -> Result<Vec<(Sentence, SemanticGraph)>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    read_conll09_str(&text, mode).map(|(c, _)| c)
}

pub fn read_conll09_str(
    text: &str,
    mode: ReadMode,
) -> Result<(Vec<(Sentence, SemanticGraph)>, ReadStats), CorpusError> {
    let mut out = Vec::new();
    let mut stats = ReadStats::default();
    let mut block: Vec<(usize, Vec<&str>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !block.is_empty() {
                out.push(parse_block(&block, mode, &mut stats)?);
                block.clear();
            }
            continue;
        }
        block.push((i + 1, line.split('\t').collect()));
    }
    if !block.is_empty() {
        out.push(parse_block(&block, mode, &mut stats)?);
    }
    stats.sentences = out.len();
    Ok((out, stats))
}

fn cell<'a>(cols: &[&'a str], i: usize) -> Option<&'a str> {
    cols.get(i).copied().filter(|c| !c.is_empty() && *c != "_")
}

fn parse_block(
    rows: &[(usize, Vec<&str>)],
    mode: ReadMode,
    stats: &mut ReadStats,
) -> Result<(Sentence, SemanticGraph), CorpusError> {
    let min_cols = match mode {
        ReadMode::GoldPredicates => FIXED_COLUMNS,
        ReadMode::Raw => 2,
    };
    let width = rows[0].1.len();
    let mut tokens = Vec::with_capacity(rows.len());
    for (r, (line, cols)) in rows.iter().enumerate() {
        let perr = |message: String| CorpusError::Parse { line: *line, message };
        if cols.len() < min_cols {
            return Err(perr(format!(
                "expected at least {min_cols} columns, found {}",
                cols.len()
            )));
        }
        if mode == ReadMode::GoldPredicates && cols.len() != width {
            return Err(perr(format!(
                "column-count mismatch: row has {} columns, sentence started with {width}",
                cols.len()
            )));
        }
        let id: usize = cols[0].parse().map_err(|_| perr(format!("bad ID {:?}", cols[0])))?;
        if id != r + 1 {
            return Err(perr(format!("non-contiguous ID: expected {}, found {id}", r + 1)));
        }
        let form = cols[1];
        let lemma = cell(cols, 3).or_else(|| cell(cols, 2)).unwrap_or(form);
        let mut tok = Token::new(id, form, lemma);
        if cols.len() >= 2 + MORPH_COLUMNS {
            tok.morph = cols[2..2 + MORPH_COLUMNS].iter().map(|s| s.to_string()).collect();
        }
        if mode == ReadMode::GoldPredicates && cols[12] == "Y" {
            let sense = cell(cols, 13).ok_or_else(|| perr("FILLPRED=Y without a PRED sense".into()))?;
            tok.is_predicate = true;
            tok.pred_sense = Some(sense.to_string());
        }
        tokens.push(tok);
    }

    let predicates: Vec<usize> = tokens.iter().filter(|t| t.is_predicate).map(|t| t.index).collect();
    let mut graph = SemanticGraph::new(tokens.len());
    if mode == ReadMode::GoldPredicates {
        let n_apred = width - FIXED_COLUMNS;
        if n_apred != predicates.len() {
            return Err(CorpusError::Parse {
                line: rows[0].0,
                message: format!("APRED column count {n_apred} != predicate count {}", predicates.len()),
            });
        }
        for (r, (line, cols)) in rows.iter().enumerate() {
            let dep = r + 1;
            tokens[r].apred_cells = cols[FIXED_COLUMNS..].iter().map(|s| s.to_string()).collect();
            for (k, &head) in predicates.iter().enumerate() {
                let Some(role) = cell(cols, FIXED_COLUMNS + k) else {
                    continue;
                };
                if head == dep {
                    stats.self_loops_dropped += 1;
                    continue;
                }
                graph.add_arc(head, dep, role).map_err(|e| CorpusError::Parse {
                    line: *line,
                    message: e.to_string(),
                })?;
            }
        }
    }
    stats.tokens += tokens.len();
    Ok((Sentence { tokens, predicates }, graph))
}

pub fn write_conll09(path: &Path, corpus: &[(Sentence, SemanticGraph)]) -> Result<(), CorpusError> {
    let text = write_conll09_string(corpus)?;
    std::fs::write(path, text).map_err(|e| CorpusError::io(path, e))
}

pub fn write_conll09_string(corpus: &[(Sentence, SemanticGraph)]) -> Result<String, CorpusError> {
    let mut out = String::new();
    for (s_idx, (sent, graph)) in corpus.iter().enumerate() {
        let serr = |message: String| CorpusError::Serialize {
            sentence: s_idx,
            message,
        };
        if graph.sentence_len() != sent.len() {
            return Err(serr(format!(
                "graph covers {} tokens, sentence has {}",
                graph.sentence_len(),
                sent.len()
            )));
        }
        let predicates: Vec<usize> = sent.tokens.iter().filter(|t| t.is_predicate).map(|t| t.index).collect();
        graph.validate_heads(&predicates).map_err(|e| serr(e.to_string()))?;
        for tok in &sent.tokens {
            write!(out, "{}\t{}", tok.index, tok.form).unwrap();
            if tok.morph.len() == MORPH_COLUMNS {
                for c in &tok.morph {
                    write!(out, "\t{c}").unwrap();
                }
            } else {
                write!(out, "\t{0}\t{0}", tok.lemma).unwrap();
                for _ in 2..MORPH_COLUMNS {
                    out.push_str("\t_");
                }
            }
            if tok.is_predicate {
                let sense = tok
                    .pred_sense
                    .as_deref()
                    .ok_or_else(|| serr(format!("predicate {} has no sense", tok.index)))?;
                write!(out, "\tY\t{sense}").unwrap();
            } else {
                out.push_str("\t_\t_");
            }
            for &head in &predicates {
                out.push('\t');
                out.push_str(graph.label(head, tok.index).unwrap_or("_"));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    Ok(out)
}
