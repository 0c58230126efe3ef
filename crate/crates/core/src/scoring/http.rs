//! OpenAI-compatible HTTP backends.

use std::time::Duration;

use serde_json::{json, Value};

use super::backend::{
    BackendDescriptor, Capability, Conditioning, EchoToken, Prediction, ScoringBackend,
    APPENDIX_COMPLETION_PROMPT,
};
use crate::error::{Result, SmiError};

pub const MODEL_API_KEY_VAR: &str = "MODEL_API_KEY";

/// Thin JSON-over-HTTPS client for an OpenAI-compatible server.
#[derive(Debug, Clone)]
pub struct OpenAiClient {
    base_url: String,
    api_key: Option<String>,
    key_vars: Vec<String>,
    agent: ureq::Agent,
}

impl OpenAiClient {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            key_vars: vec![MODEL_API_KEY_VAR.to_string()],
            agent,
        }
    }

    /// Reads the key from the first set variable in `vars`.
    pub fn from_env(base_url: &str, vars: &[&str]) -> Self {
        let key = vars
            .iter()
            .find_map(|v| std::env::var(v).ok().filter(|k| !k.is_empty()));
        let mut client = Self::new(base_url, key, Duration::from_secs(120));
        client.key_vars = vars.iter().map(|v| v.to_string()).collect();
        client
    }

    pub fn has_key(&self) -> bool {
        self.api_key.is_some()
    }

    fn auth_hint(&self) -> String {
        let vars = self.key_vars.join(" or ");
        if self.api_key.is_some() {
            format!("the key in {vars} was rejected")
        } else {
            format!("no API key found; export {vars} and rerun")
        }
    }

    /// POSTs `body` to `{base_url}/{path}`. Status 429 and 5xx map to
    /// retryable transport errors; other 4xx map to capability errors, which
    /// is how servers reject echo or logprob requests.
    pub fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let url = format!("{}/{}", self.base_url, path);
        let mut req = self
            .agent
            .post(&url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| SmiError::transport(format!("POST {url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| SmiError::transport(format!("reading response from {url}: {e}")))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| SmiError::transport(format!("bad JSON from {url}: {e}"))),
            429 | 500..=599 => Err(SmiError::transport(format!(
                "{url} returned {status}: {text}"
            ))),
            401 | 403 => Err(SmiError::Transport {
                message: format!("{url} returned {status}: {}", self.auth_hint()),
                retryable: false,
            }),
            _ => Err(SmiError::Capability(format!(
                "{url} returned {status}: {text}"
            ))),
        }
    }
}

fn context_prefix(ctx: &Conditioning) -> String {
    ctx.question
        .as_ref()
        .map(|q| format!("{q}\n"))
        .unwrap_or_default()
}

/// Byte offset of every char boundary, indexed by char offset.
fn char_to_byte(text: &str) -> Vec<usize> {
    let mut map: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
    map.push(text.len());
    map
}

/// Turns an echoed completions `logprobs` object into tokens of `text`,
/// dropping the conditioning prefix and any generated tokens.
pub fn parse_echo_logprobs(
    logprobs: &Value,
    prompt: &str,
    text_start: usize,
) -> Result<Vec<EchoToken>> {
    let tokens = logprobs["tokens"].as_array();
    let lps = logprobs["token_logprobs"].as_array();
    let offsets = logprobs["text_offset"].as_array();
    let (Some(tokens), Some(lps), Some(offsets)) = (tokens, lps, offsets) else {
        return Err(SmiError::Capability(
            "response lacks tokens/token_logprobs/text_offset".into(),
        ));
    };
    if tokens.len() != lps.len() || tokens.len() != offsets.len() {
        return Err(SmiError::Alignment(format!(
            "logprob arrays disagree in length: {} tokens, {} logprobs, {} offsets",
            tokens.len(),
            lps.len(),
            offsets.len()
        )));
    }
    let map = char_to_byte(prompt);
    let mut out = Vec::new();
    for i in 0..tokens.len() {
        let char_off = offsets[i]
            .as_u64()
            .ok_or_else(|| SmiError::Alignment(format!("token {i} has no offset")))?
            as usize;
        let Some(&byte_off) = map.get(char_off) else {
            break; // generated tokens sit past the end of the prompt
        };
        if byte_off >= prompt.len() {
            break;
        }
        if byte_off < text_start {
            continue;
        }
        out.push(EchoToken {
            token: tokens[i].as_str().unwrap_or_default().to_string(),
            logprob: lps[i].as_f64(),
            offset: byte_off - text_start,
        });
    }
    Ok(out)
}

/// Completions endpoint with `echo` and prompt log-probabilities.
pub struct CompletionsBackend {
    descriptor: BackendDescriptor,
    client: OpenAiClient,
    requests: std::sync::atomic::AtomicUsize,
}

impl CompletionsBackend {
    pub fn new(descriptor: BackendDescriptor, client: OpenAiClient) -> Self {
        Self {
            descriptor,
            client,
            requests: Default::default(),
        }
    }
}

impl ScoringBackend for CompletionsBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn echo_logprobs(&self, text: &str, ctx: &Conditioning) -> Result<Vec<EchoToken>> {
        self.requests
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let head = context_prefix(ctx);
        let prompt = format!("{head}{text}");
        let mut body = json!({
            "model": self.descriptor.model_id,
            "prompt": prompt,
            "max_tokens": 1,
            "temperature": 0,
            "echo": true,
            "logprobs": 1,
        });
        if let Some(image) = &ctx.image_ref {
            body["image_ref"] = json!(image);
        }
        let resp = self.client.post("completions", &body)?;
        let logprobs = &resp["choices"][0]["logprobs"];
        if logprobs.is_null() {
            return Err(SmiError::Capability(
                "server did not return prompt log-probabilities".into(),
            ));
        }
        parse_echo_logprobs(logprobs, &prompt, head.len())
    }

    fn request_count(&self) -> usize {
        self.requests.load(std::sync::atomic::Ordering::Relaxed)
    }
}

/// Chat-completions endpoint that only reveals the generated token.
pub struct ChatPredictBackend {
    descriptor: BackendDescriptor,
    client: OpenAiClient,
    top_logprobs: u32,
    requests: std::sync::atomic::AtomicUsize,
}

impl ChatPredictBackend {
    pub fn new(descriptor: BackendDescriptor, client: OpenAiClient) -> Self {
        Self {
            descriptor,
            client,
            top_logprobs: 5,
            requests: Default::default(),
        }
    }

    pub fn build_message(&self, context: &str, ctx: &Conditioning) -> String {
        let template = self
            .descriptor
            .prompt_template
            .as_deref()
            .unwrap_or(APPENDIX_COMPLETION_PROMPT);
        format!("{}{template} {context}", context_prefix(ctx))
    }
}

/// Reads the first generated token from a chat-completions response.
pub fn parse_chat_prediction(resp: &Value) -> Result<Prediction> {
    let choice = &resp["choices"][0];
    let Some(first) = choice["logprobs"]["content"]
        .as_array()
        .and_then(|c| c.first())
    else {
        // empty output is a non-match, not an error
        if choice["message"]["content"]
            .as_str()
            .is_some_and(str::is_empty)
        {
            return Ok(Prediction::default());
        }
        return Err(SmiError::Capability(
            "chat response carries no token log-probabilities".into(),
        ));
    };
    let top = first["top_logprobs"]
        .as_array()
        .map(|alts| {
            alts.iter()
                .filter_map(|a| Some((a["token"].as_str()?.to_string(), a["logprob"].as_f64()?)))
                .collect()
        })
        .unwrap_or_default();
    Ok(Prediction {
        token: first["token"].as_str().unwrap_or_default().to_string(),
        logprob: first["logprob"].as_f64().unwrap_or(f64::NEG_INFINITY),
        top,
    })
}

impl ScoringBackend for ChatPredictBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn predict_next(&self, context: &str, ctx: &Conditioning) -> Result<Prediction> {
        self.requests
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let text = self.build_message(context, ctx);
        let content = match &ctx.image_ref {
            Some(image) => json!([
                {"type": "image_url", "image_url": {"url": image}},
                {"type": "text", "text": text},
            ]),
            None => json!(text),
        };
        let body = json!({
            "model": self.descriptor.model_id,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": 1,
            "temperature": 0,
            "logprobs": true,
            "top_logprobs": self.top_logprobs,
        });
        parse_chat_prediction(&self.client.post("chat/completions", &body)?)
    }

    fn request_count(&self) -> usize {
        self.requests.load(std::sync::atomic::Ordering::Relaxed)
    }
}

/// Builds the HTTP backend matching the descriptor's capability.
pub fn http_backend(descriptor: BackendDescriptor) -> Box<dyn ScoringBackend> {
    let client = OpenAiClient::from_env(&descriptor.endpoint, &[MODEL_API_KEY_VAR]);
    match descriptor.capability {
        Capability::FullVocabLogprobs => Box::new(CompletionsBackend::new(descriptor, client)),
        Capability::PredictedTokenOnly => Box::new(ChatPredictBackend::new(descriptor, client)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_offsets_convert_chars_to_bytes() {
        // "Q?\né b" : the context "Q?\n" is 3 chars, 'é' is 2 bytes
        let prompt = "Q?\né b";
        let lp = json!({
            "tokens": ["Q", "?\n", "é", " b", "!"],
            "token_logprobs": [null, -0.1, -0.2, -0.3, -0.4],
            "text_offset": [0, 1, 3, 4, 6],
        });
        let toks = parse_echo_logprobs(&lp, prompt, 3).unwrap();
        assert_eq!(toks.len(), 2);
        assert_eq!(toks[0].token, "é");
        assert_eq!(toks[0].offset, 0);
        assert_eq!(toks[1].offset, 2);
        assert_eq!(toks[1].logprob, Some(-0.3));
    }

    #[test]
    fn echo_length_mismatch_is_alignment_error() {
        let lp = json!({"tokens": ["a"], "token_logprobs": [], "text_offset": [0]});
        assert!(matches!(
            parse_echo_logprobs(&lp, "a", 0),
            Err(SmiError::Alignment(_))
        ));
    }

    #[test]
    fn chat_prediction_parses_top_alternatives() {
        let resp = json!({"choices": [{"message": {"content": " and"}, "logprobs": {"content": [
            {"token": " and", "logprob": -0.2, "top_logprobs": [
                {"token": " and", "logprob": -0.2}, {"token": " but", "logprob": -2.0}]}
        ]}}]});
        let p = parse_chat_prediction(&resp).unwrap();
        assert_eq!(p.token, " and");
        assert_eq!(p.top.len(), 2);
        assert_eq!(p.top[1], (" but".to_string(), -2.0));
    }

    #[test]
    fn empty_chat_output_is_a_prediction() {
        let resp = json!({"choices": [{"message": {"content": ""}}]});
        assert_eq!(parse_chat_prediction(&resp).unwrap().token, "");
    }

    #[test]
    fn chat_message_uses_template() {
        let d = BackendDescriptor::new("http://x", "m", Capability::PredictedTokenOnly);
        let b = ChatPredictBackend::new(
            d,
            OpenAiClient::new("http://x", None, Duration::from_secs(1)),
        );
        let msg = b.build_message("Today is", &Conditioning::default());
        assert_eq!(msg, format!("{APPENDIX_COMPLETION_PROMPT} Today is"));
    }

    #[test]
    fn unreachable_server_is_retryable() {
        let c = OpenAiClient::new("http://127.0.0.1:9", None, Duration::from_millis(500));
        match c.post("completions", &json!({})) {
            Err(SmiError::Transport { retryable, .. }) => assert!(retryable),
            other => panic!("unexpected {other:?}"),
        }
    }
}
