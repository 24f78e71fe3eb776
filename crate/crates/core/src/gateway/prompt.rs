use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::fsutil::sha256_hex;

const ALPACA_PREAMBLE: &str = "Below is an instruction that describes a task, paired with an input that provides further context. Write a response that appropriately completes the request.";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    /// Instruction, input and response headers only.
    #[default]
    Default,
    /// The same layout behind the stock Alpaca task preamble.
    Alpaca,
}

impl PromptStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptStyle::Default => "default",
            PromptStyle::Alpaca => "alpaca",
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptStyle {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(PromptStyle::Default),
            "alpaca" => Ok(PromptStyle::Alpaca),
            other => Err(GatewayError::Config(format!("unknown prompt style {other:?}"))),
        }
    }
}

pub fn assemble_prompt(instruction: &str, input: &str, style: PromptStyle) -> Result<String, GatewayError> {
    if instruction.is_empty() || input.is_empty() {
        return Err(GatewayError::Config("instruction and input must be non-empty".into()));
    }
    let body = format!("### Instruction:\n{instruction}\n\n### Input:\n{input}\n\n### Response:\n");
    Ok(match style {
        PromptStyle::Default => body,
        PromptStyle::Alpaca => format!("{ALPACA_PREAMBLE}\n\n{body}"),
    })
}

pub fn prompt_hash(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())
}
