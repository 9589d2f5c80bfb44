//! Dataset import/export as JSON lines of integer token lists.

use crate::error::Result;
use crate::seqpolicy::Token;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct PairRow {
    prompt: Vec<Token>,
    target: Vec<Token>,
}

pub fn write_pairs_jsonl(path: &Path, pairs: &[(Vec<Token>, Vec<Token>)]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (prompt, target) in pairs {
        let row = PairRow { prompt: prompt.clone(), target: target.clone() };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<(Vec<Token>, Vec<Token>)>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut pairs = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: PairRow = serde_json::from_str(&line)?;
        pairs.push((row.prompt, row.target));
    }
    Ok(pairs)
}

pub fn write_seqs_jsonl(path: &Path, seqs: &[Vec<Token>]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for seq in seqs {
        serde_json::to_writer(&mut w, seq)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_seqs_jsonl(path: &Path) -> Result<Vec<Vec<Token>>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut seqs = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        seqs.push(serde_json::from_str(&line)?);
    }
    Ok(seqs)
}
