//! Separator-delimited message framing over byte streams.
//!
//! A stream carries opaque messages each terminated by a single separator
//! byte. Bytes after the last separator are kept in the remainder until the
//! next chunk completes them.

use alloc::vec::Vec;

use crate::error::FramingError;

pub const DEFAULT_SEPARATOR: u8 = b';';

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Framer {
    separator: u8,
    remainder: Vec<u8>,
}

impl Default for Framer {
    fn default() -> Self {
        Self::new(DEFAULT_SEPARATOR)
    }
}

impl Framer {
    pub fn new(separator: u8) -> Self {
        Self {
            separator,
            remainder: Vec::new(),
        }
    }

    pub fn separator(&self) -> u8 {
        self.separator
    }

    /// Bytes received after the last separator.
    pub fn remainder(&self) -> &[u8] {
        &self.remainder
    }

    /// Consumes a chunk and returns every message it completes, in order.
    /// Empty messages (consecutive separators) are dropped.
    pub fn feed(&mut self, chunk: &[u8]) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        let mut rest = chunk;
        while let Some(pos) = rest.iter().position(|&b| b == self.separator) {
            let (head, tail) = rest.split_at(pos);
            if self.remainder.is_empty() {
                if !head.is_empty() {
                    out.push(head.to_vec());
                }
            } else {
                let mut msg = core::mem::take(&mut self.remainder);
                msg.extend_from_slice(head);
                out.push(msg);
            }
            rest = &tail[1..];
        }
        self.remainder.extend_from_slice(rest);
        out
    }

    /// Appends the separator to `message`.
    pub fn encode(&self, message: &[u8]) -> Result<Vec<u8>, FramingError> {
        encode(self.separator, message)
    }
}

pub fn encode(separator: u8, message: &[u8]) -> Result<Vec<u8>, FramingError> {
    if message.is_empty() {
        return Err(FramingError::Empty);
    }
    if let Some(position) = message.iter().position(|&b| b == separator) {
        return Err(FramingError::ContainsSeparator {
            separator,
            position,
        });
    }
    let mut out = Vec::with_capacity(message.len() + 1);
    out.extend_from_slice(message);
    out.push(separator);
    Ok(out)
}
