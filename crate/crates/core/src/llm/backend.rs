use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{Conversation, LlmError, TemplateId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
    /// Latency reported by the backend itself; the gateway measures wall
    /// time when absent.
    pub latency: Option<Duration>,
}

pub trait LlmBackend: Send + Sync {
    fn chat(&self, template: TemplateId, conversation: &Conversation) -> Result<ChatReply, LlmError>;
}

/// Rough token count used where the provider reports none.
pub fn approx_tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub template_id: TemplateId,
    pub prompt_digest: String,
    pub reply: String,
    /// Last user turn, kept for readability only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

struct ScriptEntry {
    replies: Vec<String>,
    served: usize,
}

/// Replays replies keyed by `(template_id, prompt_digest)`.
///
/// Several records with the same key are served in file order; the last one
/// repeats once the list is used up.
pub struct ScriptedBackend {
    entries: Mutex<HashMap<(TemplateId, String), ScriptEntry>>,
}

impl ScriptedBackend {
    pub fn new(records: impl IntoIterator<Item = TranscriptRecord>) -> Self {
        let mut entries: HashMap<(TemplateId, String), ScriptEntry> = HashMap::new();
        for r in records {
            entries
                .entry((r.template_id, r.prompt_digest))
                .or_insert_with(|| ScriptEntry {
                    replies: Vec::new(),
                    served: 0,
                })
                .replies
                .push(r.reply);
        }
        ScriptedBackend {
            entries: Mutex::new(entries),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TranscriptRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(Self::new(records))
    }
}

impl LlmBackend for ScriptedBackend {
    fn chat(&self, template: TemplateId, conversation: &Conversation) -> Result<ChatReply, LlmError> {
        let digest = conversation.digest();
        let mut entries = self.entries.lock();
        let entry = entries
            .get_mut(&(template, digest.clone()))
            .ok_or(LlmError::ScriptMiss { template, digest })?;
        let idx = entry.served.min(entry.replies.len() - 1);
        entry.served += 1;
        let text = entry.replies[idx].clone();
        Ok(ChatReply {
            tokens_in: approx_tokens(conversation.total_chars()),
            tokens_out: approx_tokens(text.chars().count()),
            text,
            latency: Some(Duration::ZERO),
        })
    }
}

type Responder = dyn Fn(TemplateId, &Conversation) -> Option<String> + Send + Sync;

/// Answers with a caller-supplied function; `None` is treated as a script
/// miss. Useful for fixtures and for generating transcripts.
pub struct ResponderBackend {
    respond: Box<Responder>,
}

impl ResponderBackend {
    pub fn new(f: impl Fn(TemplateId, &Conversation) -> Option<String> + Send + Sync + 'static) -> Self {
        ResponderBackend { respond: Box::new(f) }
    }
}

impl LlmBackend for ResponderBackend {
    fn chat(&self, template: TemplateId, conversation: &Conversation) -> Result<ChatReply, LlmError> {
        let text = (self.respond)(template, conversation).ok_or_else(|| LlmError::ScriptMiss {
            template,
            digest: conversation.digest(),
        })?;
        Ok(ChatReply {
            tokens_in: approx_tokens(conversation.total_chars()),
            tokens_out: approx_tokens(text.chars().count()),
            text,
            latency: Some(Duration::ZERO),
        })
    }
}

/// Wraps a backend and keeps every exchange as a transcript record.
pub struct RecordingBackend {
    inner: Arc<dyn LlmBackend>,
    records: Mutex<Vec<TranscriptRecord>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn LlmBackend>) -> Self {
        RecordingBackend {
            inner,
            records: Mutex::new(Vec::new()),
        }
    }

    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.records.lock().clone()
    }

    pub fn write_transcript(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        for r in self.records.lock().iter() {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
        f.sync_all()?;
        Ok(())
    }
}

impl LlmBackend for RecordingBackend {
    fn chat(&self, template: TemplateId, conversation: &Conversation) -> Result<ChatReply, LlmError> {
        let reply = self.inner.chat(template, conversation)?;
        self.records.lock().push(TranscriptRecord {
            template_id: template,
            prompt_digest: conversation.digest(),
            reply: reply.text.clone(),
            prompt: conversation.last_user_text().map(str::to_string),
        });
        Ok(reply)
    }
}
