//! Bearer tokens for annotators.
//!
//! A token reads `<annotator>.<expiry>.<mac>`: the annotator id, the expiry
//! as Unix seconds, and a hex HMAC-SHA256 of `annotator.expiry` under the
//! server secret. The store keeps only the SHA-256 of the latest token per
//! annotator, so issuing a new token revokes the old one.

use chrono::{DateTime, Utc};
use hmac::{Hmac, KeyInit, Mac};
use sha2::{Digest, Sha256};
use thiserror::Error;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("missing bearer token")]
    Missing,
    #[error("malformed token")]
    Malformed,
    #[error("token signature does not match")]
    BadSignature,
    #[error("token expired at {0}")]
    Expired(DateTime<Utc>),
    #[error("token has been revoked")]
    Revoked,
}

impl AuthError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Missing => "MISSING_TOKEN",
            Self::Malformed | Self::BadSignature => "INVALID_TOKEN",
            Self::Expired(_) => "TOKEN_EXPIRED",
            Self::Revoked => "TOKEN_REVOKED",
        }
    }
}

/// An issued token with its owner and expiry.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct SessionToken {
    pub annotator_id: String,
    pub token: String,
    pub expires_at: DateTime<Utc>,
}

fn mac(secret: &[u8], payload: &str) -> HmacSha256 {
    let mut mac = HmacSha256::new_from_slice(secret).expect("HMAC accepts keys of any length");
    mac.update(payload.as_bytes());
    mac
}

pub fn issue(secret: &[u8], annotator_id: &str, expires_at: DateTime<Utc>) -> SessionToken {
    let payload = format!("{annotator_id}.{}", expires_at.timestamp());
    let tag = hex::encode(mac(secret, &payload).finalize().into_bytes());
    SessionToken {
        annotator_id: annotator_id.to_string(),
        token: format!("{payload}.{tag}"),
        expires_at: DateTime::from_timestamp(expires_at.timestamp(), 0).expect("in range"),
    }
}

/// Hex SHA-256 of a token, as kept in the store.
pub fn token_hash(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

/// Checks signature and expiry and returns the annotator id. Revocation is
/// checked separately against the stored hash.
pub fn verify(secret: &[u8], token: &str, now: DateTime<Utc>) -> Result<String, AuthError> {
    let mut parts = token.rsplitn(3, '.');
    let (Some(tag), Some(expiry), Some(annotator)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(AuthError::Malformed);
    };
    let expiry: i64 = expiry.parse().map_err(|_| AuthError::Malformed)?;
    let tag = hex::decode(tag).map_err(|_| AuthError::Malformed)?;
    mac(secret, &format!("{annotator}.{expiry}"))
        .verify_slice(&tag)
        .map_err(|_| AuthError::BadSignature)?;
    let expires_at = DateTime::from_timestamp(expiry, 0).ok_or(AuthError::Malformed)?;
    if now >= expires_at {
        return Err(AuthError::Expired(expires_at));
    }
    Ok(annotator.to_string())
}
