use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub digest: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayStore {
    pub version: u32,
    pub exchanges: Vec<Exchange>,
}

impl ReplayStore {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), BackendError> {
        let json = serde_json::to_string_pretty(self).expect("store serializes");
        std::fs::write(path, json).map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))
    }
}

enum Inner {
    Record {
        live: Box<dyn ChatBackend>,
        store: ReplayStore,
        path: PathBuf,
    },
    Replay {
        queues: HashMap<String, VecDeque<ChatResponse>>,
    },
}

/// Records exchanges of a live backend, or serves them back by request digest.
pub struct ReplayBackend {
    id: String,
    inner: Inner,
}

impl ReplayBackend {
    /// Wraps `live`; every exchange is flushed to `path` as it happens.
    pub fn record(live: Box<dyn ChatBackend>, path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        Self {
            id: format!("record:{}", path.display()),
            inner: Inner::Record {
                live,
                store: ReplayStore {
                    version: 1,
                    exchanges: Vec::new(),
                },
                path,
            },
        }
    }

    pub fn replay(path: &Path) -> Result<Self, BackendError> {
        let store = ReplayStore::load(path)?;
        Ok(Self::from_store(
            store,
            format!("replay:{}", path.display()),
        ))
    }

    pub fn from_store(store: ReplayStore, id: impl Into<String>) -> Self {
        let mut queues: HashMap<String, VecDeque<ChatResponse>> = HashMap::new();
        for ex in store.exchanges {
            queues.entry(ex.digest).or_default().push_back(ex.response);
        }
        Self {
            id: id.into(),
            inner: Inner::Replay { queues },
        }
    }

    pub fn mode(&self) -> ReplayMode {
        match self.inner {
            Inner::Record { .. } => ReplayMode::Record,
            Inner::Replay { .. } => ReplayMode::Replay,
        }
    }
}

impl ChatBackend for ReplayBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let digest = request.digest();
        match &mut self.inner {
            Inner::Record { live, store, path } => {
                let response = live.complete(request)?;
                store.exchanges.push(Exchange {
                    digest,
                    request: request.clone(),
                    response: response.clone(),
                });
                store.save(path)?;
                Ok(response)
            }
            Inner::Replay { queues } => queues
                .get_mut(&digest)
                .and_then(VecDeque::pop_front)
                .ok_or_else(|| BackendError::ReplayMiss {
                    digest,
                    request: serde_json::to_string(request).unwrap_or_default(),
                }),
        }
    }
}
