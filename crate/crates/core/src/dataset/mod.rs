//! Instruction samples: pre-training task generation, fine-tuning prompt
//! assembly and cleanup, the chat training string, and corpus statistics.

mod finetune;
mod pretrain;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::DatasetError;
use crate::templates::Task;

pub use finetune::{
    build_finetune_prompt, parse_conversation, sanitize_conversation, OcrBlock, PromptPayload,
    SanitizeConfig, SanitizeReport, DEFAULT_BANNED_PHRASES, DEFAULT_GENERATION_INSTRUCTIONS,
};
pub use pretrain::{
    build_detection, build_recognition, build_spotting, PretrainBuilder, PretrainConfig,
    PretrainItem,
};

pub const SYSTEM_MESSAGE: &str = "A chat between a curious user and an artificial intelligence assistant. The assistant gives helpful, detailed, and polite answers to the user's questions.";
pub const IMAGE_PLACEHOLDER: &str = "<image><Image Embedding></image>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationTurn {
    pub role: Role,
    pub text: String,
}

impl ConversationTurn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleTask {
    Detection,
    Recognition,
    Spotting,
    Conversation,
}

impl From<Task> for SampleTask {
    fn from(t: Task) -> Self {
        match t {
            Task::Detection => SampleTask::Detection,
            Task::Recognition => SampleTask::Recognition,
            Task::Spotting => SampleTask::Spotting,
        }
    }
}

impl fmt::Display for SampleTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleTask::Detection => "detection",
            SampleTask::Recognition => "recognition",
            SampleTask::Spotting => "spotting",
            SampleTask::Conversation => "conversation",
        })
    }
}

/// One training example, serialized as `{id, image, task, conversations}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub id: String,
    #[serde(rename = "image")]
    pub image_ref: String,
    pub task: SampleTask,
    #[serde(rename = "conversations")]
    pub turns: Vec<ConversationTurn>,
}

impl InstructionSample {
    /// Checks that turns are non-empty and alternate starting with the user.
    pub fn check_alternation(&self) -> Result<(), DatasetError> {
        if self.turns.is_empty() {
            return Err(DatasetError::Structure(format!("{}: no turns", self.id)));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if turn.role != expected {
                return Err(DatasetError::Structure(format!(
                    "{}: turn {i} is {:?}, expected {expected:?}",
                    self.id, turn.role
                )));
            }
        }
        Ok(())
    }
}

/// The chat string a model is trained on.
///
/// The image placeholder precedes the first user turn only.
pub fn render_training_string(sample: &InstructionSample) -> String {
    let mut out = String::from(SYSTEM_MESSAGE);
    let mut image_pending = true;
    for turn in &sample.turns {
        match turn.role {
            Role::User => {
                out.push_str(" USER: ");
                if image_pending {
                    out.push_str(IMAGE_PLACEHOLDER);
                    out.push(' ');
                    image_pending = false;
                }
            }
            Role::Assistant => out.push_str(" ASSISTANT: "),
        }
        out.push_str(&turn.text);
    }
    out
}

pub fn read_samples<R: BufRead>(reader: R) -> Result<Vec<InstructionSample>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let err = |message: String| DatasetError::Record {
            line: idx + 1,
            message,
        };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

pub fn write_samples<'a, W: Write>(
    samples: impl IntoIterator<Item = &'a InstructionSample>,
    mut w: W,
) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub const STATS_NOTE: &str = "token lengths count whitespace-separated words; subword tokenizer counts are typically higher and are not directly comparable";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub conversations: usize,
    pub user_turns: usize,
    pub assistant_turns: usize,
    pub mean_user_tokens: Option<f64>,
    pub mean_assistant_tokens: Option<f64>,
    pub per_task: BTreeMap<String, usize>,
    pub note: String,
}

/// Turn counts and mean whitespace-token lengths per role.
pub fn stats<'a>(samples: impl IntoIterator<Item = &'a InstructionSample>) -> StatsReport {
    let mut conversations = 0;
    let mut per_task = BTreeMap::new();
    let (mut user_turns, mut user_tokens) = (0usize, 0usize);
    let (mut asst_turns, mut asst_tokens) = (0usize, 0usize);
    for s in samples {
        conversations += 1;
        *per_task.entry(s.task.to_string()).or_insert(0) += 1;
        for t in &s.turns {
            let n = t.text.split_whitespace().count();
            match t.role {
                Role::User => {
                    user_turns += 1;
                    user_tokens += n;
                }
                Role::Assistant => {
                    asst_turns += 1;
                    asst_tokens += n;
                }
            }
        }
    }
    let mean = |sum: usize, n: usize| (n > 0).then(|| sum as f64 / n as f64);
    StatsReport {
        conversations,
        user_turns,
        assistant_turns: asst_turns,
        mean_user_tokens: mean(user_tokens, user_turns),
        mean_assistant_tokens: mean(asst_tokens, asst_turns),
        per_task,
        note: STATS_NOTE.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(turns: Vec<ConversationTurn>) -> InstructionSample {
        InstructionSample {
            id: "c1".into(),
            image_ref: "cover.png".into(),
            task: SampleTask::Conversation,
            turns,
        }
    }

    #[test]
    fn renders_chat_template() {
        let s = sample(vec![
            ConversationTurn::user("What is the book's title based on the image? Please provide the supporting text and its bounding box."),
            ConversationTurn::assistant("The title is \"BABIES COME FROM AIRPORTS\"[0.084, 0.049, 0.934, 0.298]."),
        ]);
        assert_eq!(
            render_training_string(&s),
            "A chat between a curious user and an artificial intelligence assistant. The assistant gives helpful, detailed, and polite answers to the user's questions. USER: <image><Image Embedding></image> What is the book's title based on the image? Please provide the supporting text and its bounding box. ASSISTANT: The title is \"BABIES COME FROM AIRPORTS\"[0.084, 0.049, 0.934, 0.298]."
        );
    }

    #[test]
    fn image_marker_only_once() {
        let s = sample(vec![
            ConversationTurn::user("q1"),
            ConversationTurn::assistant("a1"),
            ConversationTurn::user("q2"),
            ConversationTurn::assistant(""),
        ]);
        let r = render_training_string(&s);
        assert_eq!(r.matches("<image>").count(), 1);
        assert!(r.ends_with(" USER: q2 ASSISTANT: "));
        assert_eq!(r.matches("USER:").count(), 2);
        assert_eq!(r.matches("ASSISTANT:").count(), 2);
    }

    #[test]
    fn stats_means_and_empty() {
        let a = sample(vec![
            ConversationTurn::user("one two three four"),
            ConversationTurn::assistant("x"),
        ]);
        let b = sample(vec![
            ConversationTurn::user("one two three four five six"),
            ConversationTurn::assistant("x y z"),
        ]);
        let r = stats([&a, &b]);
        assert_eq!(r.conversations, 2);
        assert_eq!(r.mean_user_tokens, Some(5.0));
        assert_eq!(r.mean_assistant_tokens, Some(2.0));
        assert_eq!(r.per_task["conversation"], 2);

        let empty = stats(std::iter::empty());
        assert_eq!(empty.conversations, 0);
        assert_eq!(empty.mean_user_tokens, None);
    }

    #[test]
    fn alternation_check() {
        assert!(sample(vec![ConversationTurn::user("q")]).check_alternation().is_ok());
        assert!(sample(vec![ConversationTurn::assistant("a")]).check_alternation().is_err());
        assert!(sample(vec![]).check_alternation().is_err());
    }

    #[test]
    fn dataset_line_format() {
        let s = sample(vec![ConversationTurn::user("q"), ConversationTurn::assistant("a")]);
        let mut buf = Vec::new();
        write_samples([&s], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "{\"id\":\"c1\",\"image\":\"cover.png\",\"task\":\"conversation\",\"conversations\":[{\"role\":\"user\",\"text\":\"q\"},{\"role\":\"assistant\",\"text\":\"a\"}]}\n"
        );
        assert_eq!(read_samples(buf.as_slice()).unwrap(), vec![s]);
    }
}
