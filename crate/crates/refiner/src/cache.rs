//! Content-addressed response cache with an append-only audit log.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::request::MllmRequest;

pub const LOG_FILE: &str = "requests.log";

/// Token counts as reported by the provider.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub total_tokens: Option<u64>,
}

/// Hex SHA-256 over the model id, the prompt text, the request subject and
/// the hash of every image, each length-prefixed.
pub fn cache_key(model_id: &str, request: &MllmRequest) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(b"vpr-refiner-cache-v1");
    field(model_id.as_bytes());
    field(request.content.text.as_bytes());
    field(request.context.subject().as_bytes());
    for image in &request.content.images {
        field(&image.sha256());
    }
    hex::encode(h.finalize())
}

#[derive(Serialize)]
struct LogRecord<'a> {
    timestamp: f64,
    hash: &'a str,
    model: &'a str,
    source: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    usage: Option<Usage>,
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    log: Mutex<File>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let log_path = dir.join(LOG_FILE);
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        Ok(Self {
            dir,
            log: Mutex::new(log),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.txt"))
    }

    pub fn get(&self, key: &str) -> Result<Option<String>> {
        let path = self.path_for(key);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Writes through a temporary file so readers never see partial text.
    pub fn put(&self, key: &str, text: &str) -> Result<()> {
        let path = self.path_for(key);
        let parent = path
            .parent()
            .expect("cache entries live in a shard directory");
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let tmp = parent.join(format!(
            ".{key}.{}.{:?}.tmp",
            std::process::id(),
            std::thread::current().id()
        ));
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn log(
        &self,
        key: &str,
        model: &str,
        from_cache: bool,
        usage: Option<Usage>,
    ) -> Result<()> {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let record = LogRecord {
            timestamp,
            hash: key,
            model,
            source: if from_cache { "cache" } else { "network" },
            usage,
        };
        let mut line = serde_json::to_string(&record).expect("log record serializes");
        line.push('\n');
        let mut file = self.log.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())
            .map_err(|e| Error::io(self.dir.join(LOG_FILE), e))
    }
}
