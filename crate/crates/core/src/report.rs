//! Canonical run reports: line-oriented metric records with content hashes,
//! identical bytes for identical inputs.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Structured text report, one record per line.
#[derive(Debug, Clone)]
pub struct MetricReport {
    header: Vec<(String, String)>,
    records: Vec<String>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self {
            header: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn header(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.header.push((key.to_string(), value.to_string()));
        self
    }

    pub fn record(&mut self, line: impl Into<String>) -> &mut Self {
        self.records.push(line.into());
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::from("unitext-metrics v1\n");
        for (k, v) in &self.header {
            out.push_str(&format!("{k} {v}\n"));
        }
        for r in &self.records {
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.render().as_bytes())
    }
}

impl Default for MetricReport {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_reports_hash_identically() {
        let build = || {
            let mut r = MetricReport::new();
            r.header("config_hash", "abc");
            r.record(format!("cra u2u accuracy={:.6} ties={}", 0.95, 0));
            r
        };
        let a = build();
        let b = build();
        assert_eq!(a.render(), b.render());
        assert_eq!(a.hash(), b.hash());
        assert_eq!(sha256_hex(b"").len(), 64);
    }
}
