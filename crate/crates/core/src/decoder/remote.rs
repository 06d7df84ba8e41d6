use serde::{Deserialize, Serialize};

use super::{LanguageModel, LmError, TokenId};
use crate::remote::{ClientConfig, JsonClient, RemoteError};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct HttpLmConfig {
    /// Entries requested per step; the rest of the vocabulary is treated as
    /// probability zero.
    pub top_k: usize,
    pub eos_token: TokenId,
    pub max_context: Option<usize>,
    pub client: ClientConfig,
}

impl Default for HttpLmConfig {
    fn default() -> Self {
        Self {
            top_k: 50,
            // </s> in the BART vocabulary
            eos_token: 2,
            max_context: None,
            client: ClientConfig::default(),
        }
    }
}

/// Client for a remote generator exposing `/v1/logits`, `/v1/tokenize` and
/// `/v1/detokenize`.
#[derive(Debug)]
pub struct HttpLm {
    client: JsonClient,
    config: HttpLmConfig,
}

#[derive(Serialize)]
struct LogitsRequest<'a> {
    prefix_tokens: &'a [TokenId],
    top_k: usize,
}

#[derive(Deserialize)]
struct LogitsResponse {
    tokens: Vec<TokenId>,
    logprobs: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct TokenizeRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize, Serialize)]
struct TokensBody {
    tokens: Vec<TokenId>,
}

#[derive(Deserialize)]
struct TextBody {
    text: String,
}

impl HttpLm {
    pub fn new(base_url: &str, config: HttpLmConfig) -> Self {
        Self {
            client: JsonClient::new(base_url, config.client.clone()),
            config,
        }
    }

    fn protocol(&self, message: String) -> LmError {
        LmError::Remote(RemoteError::Protocol {
            url: format!("{}/v1/logits", self.client.base_url()),
            message,
        })
    }
}

impl<T: Real> LanguageModel<T> for HttpLm {
    fn identity(&self) -> String {
        format!("remote:{}", self.client.base_url())
    }

    fn eos_token(&self) -> TokenId {
        self.config.eos_token
    }

    fn max_context(&self) -> Option<usize> {
        self.config.max_context
    }

    /// Returns the top-k entries renormalized to a full distribution.
    fn next_log_probs(&self, context: &[TokenId], generated: &[TokenId]) -> Result<Vec<(TokenId, T)>, LmError> {
        let mut prefix = Vec::with_capacity(context.len() + generated.len());
        prefix.extend_from_slice(context);
        prefix.extend_from_slice(generated);
        let response: LogitsResponse = self.client.post(
            "/v1/logits",
            &LogitsRequest {
                prefix_tokens: &prefix,
                top_k: self.config.top_k,
            },
        )?;
        if response.tokens.len() != response.logprobs.len() {
            return Err(self.protocol(format!(
                "{} tokens but {} logprobs",
                response.tokens.len(),
                response.logprobs.len()
            )));
        }
        // JSON has no -Infinity; null stands in for it
        let logprobs: Vec<f64> = response
            .logprobs
            .iter()
            .map(|lp| lp.unwrap_or(f64::NEG_INFINITY))
            .collect();
        if logprobs.iter().any(|lp| lp.is_nan() || *lp > 1e-6) {
            return Err(self.protocol("log-probabilities must be <= 0".into()));
        }
        if logprobs.windows(2).any(|w| w[0] < w[1]) {
            return Err(self.protocol("entries are not sorted by log-probability".into()));
        }
        let top = logprobs.iter().copied().find(|lp| lp.is_finite());
        let Some(top) = top else {
            return Err(self.protocol("no finite log-probabilities".into()));
        };
        let log_mass = top
            + logprobs
                .iter()
                .filter(|lp| lp.is_finite())
                .map(|lp| (lp - top).exp())
                .sum::<f64>()
                .ln();
        Ok(response
            .tokens
            .into_iter()
            .zip(logprobs)
            .filter(|(_, lp)| lp.is_finite())
            .map(|(t, lp)| (t, T::lit(lp - log_mass)))
            .collect())
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, LmError> {
        let body: TokensBody = self.client.post("/v1/tokenize", &TokenizeRequest { text })?;
        Ok(body.tokens)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, LmError> {
        let body: TextBody = self.client.post(
            "/v1/detokenize",
            &TokensBody {
                tokens: tokens.to_vec(),
            },
        )?;
        Ok(body.text)
    }
}
