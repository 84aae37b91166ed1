use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

/// Ordered, role-tagged chat turns.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    turns: Vec<Turn>,
}

impl Conversation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_user(text: impl Into<String>) -> Self {
        let mut c = Self::new();
        c.push_user(text);
        c
    }

    pub fn push_system(&mut self, text: impl Into<String>) {
        self.turns.push(Turn {
            role: Role::System,
            text: text.into(),
        });
    }

    pub fn push_user(&mut self, text: impl Into<String>) {
        self.turns.push(Turn {
            role: Role::User,
            text: text.into(),
        });
    }

    pub fn push_assistant(&mut self, text: impl Into<String>) {
        self.turns.push(Turn {
            role: Role::Assistant,
            text: text.into(),
        });
    }

    /// Appends every turn of `other`.
    pub fn extend(&mut self, other: Conversation) {
        self.turns.extend(other.turns);
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn last_user_text(&self) -> Option<&str> {
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map(|t| t.text.as_str())
    }

    /// Checks the shape required for sending: optional leading system turn,
    /// then strictly alternating user/assistant turns ending on a user turn.
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.turns.is_empty() {
            return Err(LlmError::InvalidConversation("conversation is empty".into()));
        }
        let body = match self.turns[0].role {
            Role::System => &self.turns[1..],
            _ => &self.turns[..],
        };
        if body.is_empty() {
            return Err(LlmError::InvalidConversation(
                "conversation has no user turn".into(),
            ));
        }
        for (i, turn) in body.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if turn.role != expected {
                return Err(LlmError::InvalidConversation(format!(
                    "turn {} is {} but {} was expected",
                    i,
                    turn.role.as_str(),
                    expected.as_str()
                )));
            }
        }
        if body.last().map(|t| t.role) != Some(Role::User) {
            return Err(LlmError::InvalidConversation(
                "last turn must be a user turn".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 over the role-tagged turns; independent of how the
    /// conversation was assembled.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.turns {
            h.update(t.role.as_str().as_bytes());
            h.update([0x1f]);
            h.update(t.text.as_bytes());
            h.update([0x1e]);
        }
        hex::encode(h.finalize())
    }

    pub fn total_chars(&self) -> usize {
        self.turns.iter().map(|t| t.text.chars().count()).sum()
    }
}
