use sha2::{Digest, Sha256};

pub const TOOL: &str = concat!("cetool ", env!("CARGO_PKG_VERSION"));

/// Who produced an output: tool version, root seed and a hash of the
/// effective configuration.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    /// `config` is any canonical rendering of the resolved settings.
    pub fn new(seed: u64, config: &str) -> Self {
        let digest = Sha256::digest(config.as_bytes());
        let config_hash = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        Provenance { seed, config_hash }
    }

    /// Comment line placed at the top of CSV files.
    pub fn csv_header(&self) -> String {
        format!("# tool={TOOL} seed={} config={}\n", self.seed, self.config_hash)
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::json!({
            "tool": TOOL,
            "seed": self.seed,
            "config": self.config_hash,
        })
    }
}
