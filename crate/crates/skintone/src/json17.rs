//! JSON serialization with floats printed at 17 significant digits.
//!
//! 17 digits round-trip any f64 bit-exactly, so model files reload to the
//! same values on every platform.

use std::io;

use serde::Serialize;

use crate::error::{Error, Result};

struct SigFig17;

impl serde_json::ser::Formatter for SigFig17 {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{:.16e}", value)
    }
}

/// Serialize `value` as compact JSON with 17-significant-digit floats.
pub(crate) fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigFig17);
    value.serialize(&mut ser).map_err(|e| Error::ModelFormat {
        message: e.to_string(),
    })?;
    String::from_utf8(buf).map_err(|e| Error::ModelFormat {
        message: e.to_string(),
    })
}
