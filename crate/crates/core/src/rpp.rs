//! Remote protection over SMS.
//!
//! Wire grammar (case-insensitive, whitespace = one or more Unicode spaces):
//!
//! ```text
//! rpp <ws> (lock | ring | locate | wipe) <ws> [a-z0-9]{1,100} <end>
//! ```
//!
//! A body whose first token is not `rpp` is an ordinary message. Anything that
//! starts with the keyword but breaks the grammar is malformed and inert.
//!
//! The locate reply is `rpp-locate <lat %.6f> <lon %.6f> <ISO-8601 UTC>`.
//! Location accuracy policies do not apply to it: the owner gets the true fix.

use std::collections::BTreeSet;
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::device::{Effect, GeoFix, SimTime, SmsMessage};

pub const KEYWORD: &str = "rpp";
pub const MAX_PASSPHRASE_LEN: usize = 100;
/// Consecutive failures tolerated before protocol messages are throttled.
pub const FREE_ATTEMPTS: u32 = 5;
pub const MAX_BACKOFF_MINUTES: u64 = 60;
pub const RING_VOLUME: u8 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Lock,
    Ring,
    Locate,
    Wipe,
}

impl Verb {
    pub const ALL: [Verb; 4] = [Verb::Lock, Verb::Ring, Verb::Locate, Verb::Wipe];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Lock => "lock",
            Verb::Ring => "ring",
            Verb::Locate => "locate",
            Verb::Wipe => "wipe",
        }
    }

    fn parse(word: &str) -> Option<Verb> {
        Verb::ALL.into_iter().find(|v| v.as_str().eq_ignore_ascii_case(word))
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RppCommand {
    pub verb: Verb,
    /// Case-folded passphrase token.
    pub passphrase_token: String,
}

impl fmt::Display for RppCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{KEYWORD} {} {}", self.verb, self.passphrase_token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalformedReason {
    MissingVerb,
    UnknownVerb,
    MissingPassphrase,
    InvalidPassphrase,
    TrailingInput,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseResult {
    Command(RppCommand),
    NotRpp,
    Malformed(MalformedReason),
}

fn split_token(s: &str) -> (&str, &str) {
    let end = s.find(char::is_whitespace).unwrap_or(s.len());
    s.split_at(end)
}

pub fn parse_command(body: &str) -> ParseResult {
    let rest = match body.get(..KEYWORD.len()) {
        Some(head) if head.eq_ignore_ascii_case(KEYWORD) => &body[KEYWORD.len()..],
        _ => return ParseResult::NotRpp,
    };
    if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
        return ParseResult::NotRpp;
    }
    let malformed = ParseResult::Malformed;

    let (verb_word, rest) = split_token(rest.trim_start());
    if verb_word.is_empty() {
        return malformed(MalformedReason::MissingVerb);
    }
    let Some(verb) = Verb::parse(verb_word) else {
        return malformed(MalformedReason::UnknownVerb);
    };

    let (token, rest) = split_token(rest.trim_start());
    if token.is_empty() {
        return malformed(MalformedReason::MissingPassphrase);
    }
    if !rest.is_empty() {
        return malformed(MalformedReason::TrailingInput);
    }
    match fold_passphrase(token) {
        Ok(passphrase_token) => ParseResult::Command(RppCommand { verb, passphrase_token }),
        Err(_) => malformed(MalformedReason::InvalidPassphrase),
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PassphraseError {
    #[error("passphrase must be 1 to {MAX_PASSPHRASE_LEN} characters, got {0}")]
    Length(usize),
    #[error("passphrase may only contain letters a-z and digits 0-9")]
    Charset,
    #[error("new passphrase must differ from the current one")]
    SameAsCurrent,
    #[error("current passphrase is required and did not match")]
    CurrentMismatch,
    #[error("device has been wiped")]
    Wiped,
}

/// Validates a passphrase and returns its case-folded form.
pub fn fold_passphrase(raw: &str) -> Result<String, PassphraseError> {
    let len = raw.chars().count();
    if !(1..=MAX_PASSPHRASE_LEN).contains(&len) {
        return Err(PassphraseError::Length(len));
    }
    if !raw.chars().all(|c| c.is_ascii_alphanumeric()) {
        return Err(PassphraseError::Charset);
    }
    Ok(raw.to_ascii_lowercase())
}

/// Salted SHA-256 of a case-folded secret. The plaintext is never stored.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassphraseDigest {
    salt: String,
    digest: String,
}

impl fmt::Debug for PassphraseDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PassphraseDigest(..)")
    }
}

impl PassphraseDigest {
    pub fn new(secret: &str) -> Self {
        let mut salt = [0u8; 16];
        rand::rng().fill_bytes(&mut salt);
        Self::with_salt(secret, &salt)
    }

    pub fn with_salt(secret: &str, salt: &[u8]) -> Self {
        PassphraseDigest { salt: hex::encode(salt), digest: Self::hash(salt, secret) }
    }

    fn hash(salt: &[u8], secret: &str) -> String {
        let mut h = Sha256::new();
        h.update(salt);
        h.update(secret.to_ascii_lowercase().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn matches(&self, candidate: &str) -> bool {
        let Ok(salt) = hex::decode(&self.salt) else { return false };
        let computed = Self::hash(&salt, candidate);
        // constant-time over equal-length hex strings
        computed.len() == self.digest.len()
            && computed.bytes().zip(self.digest.bytes()).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RppConfig {
    pub enabled_commands: BTreeSet<Verb>,
    pub passphrase: PassphraseDigest,
    #[serde(default)]
    pub previous_passphrase: Option<PassphraseDigest>,
}

/// Wipe is off until the owner opts in.
pub fn default_enabled_commands() -> BTreeSet<Verb> {
    [Verb::Lock, Verb::Ring, Verb::Locate].into_iter().collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Disarmed,
    Armed,
    AwaitingNewPassphrase,
    Wiped,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RppState {
    pub phase: Phase,
    pub failed_attempts: u32,
    pub backoff_until: Option<SimTime>,
}

impl RppState {
    /// True while a passphrase is configured and the device is not wiped.
    pub fn is_armed(&self) -> bool {
        matches!(self.phase, Phase::Armed | Phase::AwaitingNewPassphrase)
    }

    fn record_failure(&mut self, now: SimTime) {
        self.failed_attempts = self.failed_attempts.saturating_add(1);
        if let Some(minutes) = backoff_minutes(self.failed_attempts) {
            self.backoff_until = Some(now.plus_minutes(minutes));
        }
    }

    fn record_success(&mut self) {
        self.failed_attempts = 0;
        self.backoff_until = None;
    }
}

/// Throttle window after `failures` consecutive failures, if any.
pub fn backoff_minutes(failures: u32) -> Option<u64> {
    if failures < FREE_ATTEMPTS {
        return None;
    }
    let exp = failures - FREE_ATTEMPTS;
    Some(if exp >= 6 { MAX_BACKOFF_MINUTES } else { (1u64 << exp).min(MAX_BACKOFF_MINUTES) })
}

/// Creates or rotates the passphrase and (re-)arms protection.
pub fn set_passphrase(
    config: Option<&RppConfig>,
    state: &RppState,
    new: &str,
) -> Result<(RppConfig, RppState), PassphraseError> {
    if state.phase == Phase::Wiped {
        return Err(PassphraseError::Wiped);
    }
    let folded = fold_passphrase(new)?;
    if config.is_some_and(|c| c.passphrase.matches(&folded)) {
        return Err(PassphraseError::SameAsCurrent);
    }
    let next = RppConfig {
        enabled_commands: config.map_or_else(default_enabled_commands, |c| c.enabled_commands.clone()),
        passphrase: PassphraseDigest::new(&folded),
        previous_passphrase: config.map(|c| c.passphrase.clone()),
    };
    let state = RppState { phase: Phase::Armed, failed_attempts: 0, backoff_until: None };
    Ok((next, state))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IgnoreReason {
    Disarmed,
    Wiped,
    Throttled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum InboundOutcome {
    NotRpp,
    Malformed { reason: MalformedReason },
    Ignored { reason: IgnoreReason },
    AuthFailed,
    Disabled { verb: Verb },
    Executed { verb: Verb },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InboundResult {
    pub state: RppState,
    pub effects: Vec<Effect>,
    pub outcome: InboundOutcome,
}

pub fn locate_reply(fix: Option<&GeoFix>, now: SimTime) -> String {
    match fix {
        Some(f) => format!("rpp-locate {:.6} {:.6} {}", f.lat, f.lon, f.timestamp.to_iso8601()),
        None => format!("rpp-locate unavailable {}", now.to_iso8601()),
    }
}

/// Processes one inbound SMS against the protection state machine.
pub fn handle_inbound(
    state: &RppState,
    config: Option<&RppConfig>,
    msg: &SmsMessage,
    fix: Option<&GeoFix>,
) -> InboundResult {
    let mut next = state.clone();
    let inert = |state: RppState, outcome| InboundResult { state, effects: Vec::new(), outcome };

    let cmd = match parse_command(&msg.body) {
        ParseResult::NotRpp => return inert(next, InboundOutcome::NotRpp),
        ParseResult::Malformed(reason) => return inert(next, InboundOutcome::Malformed { reason }),
        ParseResult::Command(cmd) => cmd,
    };
    let ignored = |reason| InboundOutcome::Ignored { reason };
    let config = match (state.phase, config) {
        (Phase::Wiped, _) => return inert(next, ignored(IgnoreReason::Wiped)),
        (Phase::Disarmed, _) | (_, None) => return inert(next, ignored(IgnoreReason::Disarmed)),
        (_, Some(c)) => c,
    };
    if state.backoff_until.is_some_and(|until| msg.received_at < until) {
        return inert(next, ignored(IgnoreReason::Throttled));
    }
    if !config.passphrase.matches(&cmd.passphrase_token) {
        next.record_failure(msg.received_at);
        return inert(next, InboundOutcome::AuthFailed);
    }
    next.record_success();
    if !config.enabled_commands.contains(&cmd.verb) {
        return inert(next, InboundOutcome::Disabled { verb: cmd.verb });
    }

    let effects = match cmd.verb {
        Verb::Lock => vec![Effect::LockDevice],
        Verb::Locate => vec![
            Effect::SendSms { to: msg.sender.clone(), body: locate_reply(fix, msg.received_at) },
            Effect::LockDevice,
        ],
        Verb::Ring => vec![Effect::LockDevice, Effect::StartRinger { volume: RING_VOLUME }],
        Verb::Wipe => {
            next.phase = Phase::Wiped;
            vec![Effect::WipeData]
        }
    };
    InboundResult { state: next, effects, outcome: InboundOutcome::Executed { verb: cmd.verb } }
}

/// Owner typed a passphrase on the lock screen. On success protection asks for
/// a fresh passphrase before it re-arms.
pub fn local_unlock(
    state: &RppState,
    config: Option<&RppConfig>,
    entered: &str,
    device_locked: bool,
) -> (RppState, bool) {
    let mut next = state.clone();
    let Some(config) = config else { return (next, false) };
    if !device_locked || !state.is_armed() {
        return (next, false);
    }
    if config.passphrase.matches(entered) {
        next.record_success();
        next.phase = Phase::AwaitingNewPassphrase;
        (next, true)
    } else {
        next.failed_attempts = next.failed_attempts.saturating_add(1);
        (next, false)
    }
}
