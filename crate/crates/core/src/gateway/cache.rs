//! On-disk response cache keyed by the job digest, so re-running a batch
//! never repeats a remote call. Writes are atomic (temp file + rename);
//! corrupt entries are detected by comparing the stored job id against the
//! path digest.

use std::path::{Path, PathBuf};

use super::RawResponse;

pub struct ResponseCache {
    dir: PathBuf,
}

#[derive(Debug)]
pub enum CacheLookup {
    Hit(RawResponse),
    Miss,
    Corrupt(String),
}

impl ResponseCache {
    pub fn open(dir: &Path) -> std::io::Result<ResponseCache> {
        std::fs::create_dir_all(dir)?;
        Ok(ResponseCache { dir: dir.to_path_buf() })
    }

    pub fn entry_path(&self, job_id: &str) -> PathBuf {
        let prefix = &job_id[..2.min(job_id.len())];
        self.dir.join(prefix).join(format!("{job_id}.json"))
    }

    pub fn get(&self, job_id: &str) -> CacheLookup {
        let path = self.entry_path(job_id);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return CacheLookup::Miss,
            Err(e) => return CacheLookup::Corrupt(format!("unreadable cache entry: {e}")),
        };
        match serde_json::from_str::<RawResponse>(&text) {
            Ok(response) if response.job_id == job_id => CacheLookup::Hit(response),
            Ok(response) => CacheLookup::Corrupt(format!(
                "digest mismatch: entry at {} holds job '{}'",
                path.display(),
                response.job_id
            )),
            Err(e) => CacheLookup::Corrupt(format!("undecodable cache entry: {e}")),
        }
    }

    pub fn put(&self, response: &RawResponse) -> std::io::Result<()> {
        let path = self.entry_path(&response.job_id);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
        std::fs::write(&tmp, serde_json::to_string(response).expect("serializable"))?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}
