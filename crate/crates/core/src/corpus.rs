//! Corpus ingestion: files or directories of UTF-8 text, split into documents
//! and sentences.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::text::normalize_text;

const TERMINALS: [char; 3] = ['。', '！', '？'];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    /// Documents in input order; each is a list of normalized sentences.
    pub documents: Vec<Vec<String>>,
    /// Lines that contained undecodable bytes (the bytes are dropped).
    pub decode_failures: usize,
}

impl Corpus {
    pub fn sentences(&self) -> impl Iterator<Item = &String> {
        self.documents.iter().flatten()
    }

    pub fn num_sentences(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    fn absorb(&mut self, raw: &[u8]) {
        let (docs, failures) = split_documents(raw);
        self.documents.extend(docs);
        self.decode_failures += failures;
    }
}

/// Split one line of text after every terminal punctuation mark. Empty
/// sentences are dropped.
pub fn split_sentences(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in line.chars() {
        cur.push(c);
        if TERMINALS.contains(&c) {
            push_sentence(&mut out, &mut cur);
        }
    }
    push_sentence(&mut out, &mut cur);
    out
}

fn push_sentence(out: &mut Vec<String>, cur: &mut String) {
    let n = normalize_text(cur.as_bytes()).text;
    if !n.is_empty() {
        out.push(n);
    }
    cur.clear();
}

/// Blank lines separate documents; every line break also ends a sentence.
/// Returns the documents and the number of lines with undecodable bytes.
pub fn split_documents(raw: &[u8]) -> (Vec<Vec<String>>, usize) {
    let mut docs = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut failures = 0;
    for line in raw.split(|&b| b == b'\n') {
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        let decoded = match std::str::from_utf8(line) {
            Ok(s) => s.to_string(),
            Err(_) => {
                failures += 1;
                let mut s = String::new();
                for chunk in line.utf8_chunks() {
                    s.push_str(chunk.valid());
                }
                s
            }
        };
        if decoded.trim().is_empty() {
            if !current.is_empty() {
                docs.push(std::mem::take(&mut current));
            }
            continue;
        }
        current.extend(split_sentences(&decoded));
    }
    if !current.is_empty() {
        docs.push(current);
    }
    (docs, failures)
}

/// Read a file, or every regular file under a directory in sorted path order.
pub fn ingest_corpus(path: &Path) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for file in corpus_files(path)? {
        let raw = std::fs::read(&file)?;
        corpus.absorb(&raw);
    }
    if corpus.decode_failures > 0 {
        log::warn!("{} lines contained undecodable bytes", corpus.decode_failures);
    }
    Ok(corpus)
}

/// Files making up a corpus path: the file itself, or every regular file
/// under a directory in sorted path order.
pub fn corpus_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        // surfaces a NotFound error for missing paths
        std::fs::metadata(path)?;
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            out.extend(corpus_files(&p)?);
        } else if p.is_file() {
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_punctuation_splits() {
        assert_eq!(split_sentences("a。b"), vec!["a。", "b"]);
        assert_eq!(split_sentences("你好！真的？好。"), vec!["你好！", "真的？", "好。"]);
        assert!(split_sentences("").is_empty());
    }

    #[test]
    fn crlf_and_blank_lines() {
        let (docs, failures) = split_documents(b"a\r\nb\r\n\r\nc\r\n");
        assert_eq!(docs, vec![vec!["a".to_string(), "b".into()], vec!["c".into()]]);
        assert_eq!(failures, 0);
    }

    #[test]
    fn empty_input_has_no_sentences() {
        let (docs, _) = split_documents(b"");
        assert!(docs.is_empty());
    }

    #[test]
    fn undecodable_lines_are_counted() {
        let (docs, failures) = split_documents(b"ok\n\xFFbad\n");
        assert_eq!(failures, 1);
        assert_eq!(docs[0], vec!["ok".to_string(), "bad".into()]);
    }

    #[test]
    fn directory_ingestion_is_sorted() {
        let dir = std::env::temp_dir().join(format!("wl-corpus-{}", std::process::id()));
        std::fs::create_dir_all(dir.join("sub")).unwrap();
        std::fs::write(dir.join("b.txt"), "乙。").unwrap();
        std::fs::write(dir.join("a.txt"), "甲。").unwrap();
        std::fs::write(dir.join("sub/c.txt"), "").unwrap();
        let c = ingest_corpus(&dir).unwrap();
        assert_eq!(c.documents, vec![vec!["甲。".to_string()], vec!["乙。".to_string()]]);
        std::fs::remove_dir_all(&dir).unwrap();
        assert!(ingest_corpus(&dir).is_err());
    }
}
