use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, EndpointConfig, Message, Transport, TransportFailure};

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f32,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

/// Chat-completion JSON over HTTP POST.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self { client })
    }
}

pub(crate) fn wire_body(endpoint: &EndpointConfig, request: &ChatRequest) -> serde_json::Value {
    serde_json::to_value(WireRequest {
        model: &endpoint.model,
        messages: &request.messages,
        temperature: request.decoding.temperature,
        max_tokens: request.decoding.max_tokens,
    })
    .expect("wire request serializes")
}

pub(crate) fn parse_wire_response(body: &str) -> Result<String, TransportFailure> {
    let parsed: WireResponse = serde_json::from_str(body)
        .map_err(|e| TransportFailure::Network(format!("malformed response body: {e}")))?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| TransportFailure::Network("response has no choices".into()))
}

impl Transport for HttpTransport {
    fn send(
        &self,
        endpoint: &EndpointConfig,
        api_key: Option<&str>,
        request: &ChatRequest,
    ) -> Result<String, TransportFailure> {
        let mut builder = self.client.post(&endpoint.url).json(&wire_body(endpoint, request));
        if let Some(key) = api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| TransportFailure::Network(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| TransportFailure::Network(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportFailure::Status {
                code: status.as_u16(),
                body,
            });
        }
        parse_wire_response(&body)
    }

    fn is_network(&self) -> bool {
        true
    }
}
