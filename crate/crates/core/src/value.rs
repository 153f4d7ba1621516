//! The value algebra passed between tasks and its canonical encoding.
//!
//! | tag  | variant | body                                        |
//! |------|---------|---------------------------------------------|
//! | 0x01 | Int     | 8-byte big-endian two's complement          |
//! | 0x02 | Float   | 8-byte IEEE-754 big-endian, NaN canonical   |
//! | 0x03 | Bytes   | 4-byte length, raw bytes                    |
//! | 0x04 | Str     | 4-byte byte length, UTF-8                   |
//! | 0x05 | List    | 4-byte element count, element encodings     |
//! | 0x06 | Ref     | 16 ObjectID bytes                           |

use std::fmt;

use crate::error::CodecError;
use crate::ids::ObjectId;
use crate::wire::{len_u32, WireReader, WireWriter};

pub const TAG_INT: u8 = 0x01;
pub const TAG_FLOAT: u8 = 0x02;
pub const TAG_BYTES: u8 = 0x03;
pub const TAG_STR: u8 = 0x04;
pub const TAG_LIST: u8 = 0x05;
pub const TAG_REF: u8 = 0x06;

/// Maximum list nesting accepted by the encoder and decoder.
pub const MAX_DEPTH: usize = 64;

/// The only NaN bit pattern that may appear on the wire.
pub const CANONICAL_NAN: u64 = 0x7FF8_0000_0000_0000;

/// Marker string heading an error value: `List[Str("__error__"), Str(msg)]`.
pub const ERROR_MARKER: &str = "__error__";

#[derive(Clone)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bytes(Vec<u8>),
    Str(String),
    List(Vec<Value>),
    Ref(ObjectId),
}

fn float_bits(f: f64) -> u64 {
    if f.is_nan() {
        CANONICAL_NAN
    } else {
        f.to_bits()
    }
}

// Equality follows the canonical encoding: floats compare by canonical bits,
// so every NaN equals every NaN and 0.0 != -0.0.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => float_bits(*a) == float_bits(*b),
            (Value::Bytes(a), Value::Bytes(b)) => a == b,
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::List(a), Value::List(b)) => a == b,
            (Value::Ref(a), Value::Ref(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "Int({v})"),
            Value::Float(v) => write!(f, "Float({v:?})"),
            Value::Bytes(v) => write!(f, "Bytes({})", hex::encode(v)),
            Value::Str(v) => write!(f, "Str({v:?})"),
            Value::List(v) => f.debug_list().entries(v).finish(),
            Value::Ref(id) => write!(f, "Ref({})", id.short()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v}"),
            Value::Bytes(v) => write!(f, "0x{}", hex::encode(v)),
            Value::Str(v) => write!(f, "{v:?}"),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
            Value::Ref(id) => write!(f, "ref:{}", id.short()),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

impl From<ObjectId> for Value {
    fn from(v: ObjectId) -> Self {
        Value::Ref(v)
    }
}

impl From<Vec<Value>> for Value {
    fn from(v: Vec<Value>) -> Self {
        Value::List(v)
    }
}

impl Value {
    /// Builds the error value that stands in for a failed task's returns.
    pub fn error(message: impl Into<String>) -> Value {
        Value::List(vec![Value::Str(ERROR_MARKER.into()), Value::Str(message.into())])
    }

    /// The error message if this is an error value.
    pub fn as_error(&self) -> Option<&str> {
        match self {
            Value::List(items) if items.len() == 2 => match (&items[0], &items[1]) {
                (Value::Str(marker), Value::Str(msg)) if marker == ERROR_MARKER => Some(msg),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn is_error(&self) -> bool {
        self.as_error().is_some()
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            Value::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_ref_id(&self) -> Option<ObjectId> {
        match self {
            Value::Ref(id) => Some(*id),
            _ => None,
        }
    }

    /// List nesting depth; scalars are depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Value::List(items) => 1 + items.iter().map(Value::depth).max().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        encode_value(self)
    }
}

pub fn encode_value(v: &Value) -> Result<Vec<u8>, CodecError> {
    let mut w = WireWriter::new();
    write_value(&mut w, v)?;
    Ok(w.finish())
}

/// Appends the canonical encoding of `v` to an existing writer.
pub fn write_value(w: &mut WireWriter, v: &Value) -> Result<(), CodecError> {
    write_at_depth(w, v, 0)
}

fn write_at_depth(w: &mut WireWriter, v: &Value, depth: usize) -> Result<(), CodecError> {
    match v {
        Value::Int(i) => {
            w.u8(TAG_INT).i64(*i);
        }
        Value::Float(f) => {
            w.u8(TAG_FLOAT).u64(float_bits(*f));
        }
        Value::Bytes(b) => {
            w.u8(TAG_BYTES).bytes(b);
        }
        Value::Str(s) => {
            w.u8(TAG_STR).str(s);
        }
        Value::List(items) => {
            if depth + 1 > MAX_DEPTH {
                return Err(CodecError::DepthExceeded);
            }
            w.u8(TAG_LIST).u32(len_u32(items.len()));
            for item in items {
                write_at_depth(w, item, depth + 1)?;
            }
        }
        Value::Ref(id) => {
            w.u8(TAG_REF).object_id(id);
        }
    }
    Ok(())
}

/// Decodes a complete encoding; trailing bytes are an error.
pub fn decode_value(bytes: &[u8]) -> Result<Value, CodecError> {
    let mut r = WireReader::new(bytes);
    let v = read_value(&mut r)?;
    r.expect_end()?;
    Ok(v)
}

/// Reads one value from the cursor, leaving the rest untouched.
pub fn read_value(r: &mut WireReader<'_>) -> Result<Value, CodecError> {
    read_at_depth(r, 0)
}

fn read_at_depth(r: &mut WireReader<'_>, depth: usize) -> Result<Value, CodecError> {
    let tag = r.u8()?;
    Ok(match tag {
        TAG_INT => Value::Int(r.i64()?),
        TAG_FLOAT => {
            let bits = r.u64()?;
            let f = f64::from_bits(bits);
            if f.is_nan() && bits != CANONICAL_NAN {
                return Err(CodecError::malformed("non-canonical NaN"));
            }
            Value::Float(f)
        }
        TAG_BYTES => Value::Bytes(r.bytes()?.to_vec()),
        TAG_STR => Value::Str(r.str()?.to_owned()),
        TAG_LIST => {
            if depth + 1 > MAX_DEPTH {
                return Err(CodecError::DepthExceeded);
            }
            let n = r.u32()? as usize;
            // every element takes at least 9 bytes except Bytes/Str/List (5)
            if n > r.remaining() / 5 {
                return Err(CodecError::malformed(format!("list count {n} exceeds input")));
            }
            let mut items = Vec::with_capacity(n);
            for _ in 0..n {
                items.push(read_at_depth(r, depth + 1)?);
            }
            Value::List(items)
        }
        TAG_REF => Value::Ref(r.object_id()?),
        other => return Err(CodecError::malformed(format!("unknown value tag {other:#04x}"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nested(depth: usize) -> Value {
        let mut v = Value::Int(0);
        for _ in 0..depth {
            v = Value::List(vec![v]);
        }
        v
    }

    #[test]
    fn int_encoding_is_fixed() {
        assert_eq!(encode_value(&Value::Int(3)).unwrap(), vec![0x01, 0, 0, 0, 0, 0, 0, 0, 3]);
        assert_eq!(
            encode_value(&Value::Int(-1)).unwrap(),
            vec![0x01, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF]
        );
    }

    #[test]
    fn empty_list_encoding() {
        assert_eq!(encode_value(&Value::List(vec![])).unwrap(), vec![0x05, 0, 0, 0, 0]);
    }

    #[test]
    fn list_with_ref_hand_assembled() {
        let id = ObjectId([0xAB; 16]);
        let mut expected = vec![0x05, 0, 0, 0, 2];
        expected.extend_from_slice(&[0x01, 0, 0, 0, 0, 0, 0, 0, 1]);
        expected.push(0x06);
        expected.extend_from_slice(&[0xAB; 16]);
        let v = Value::List(vec![Value::Int(1), Value::Ref(id)]);
        assert_eq!(encode_value(&v).unwrap(), expected);
        assert_eq!(decode_value(&expected).unwrap(), v);
    }

    #[test]
    fn str_and_bytes_encoding() {
        assert_eq!(encode_value(&Value::from("hé")).unwrap(), vec![0x04, 0, 0, 0, 3, b'h', 0xC3, 0xA9]);
        assert_eq!(encode_value(&Value::Bytes(vec![9])).unwrap(), vec![0x03, 0, 0, 0, 1, 9]);
    }

    #[test]
    fn nan_is_canonicalised() {
        let weird = f64::from_bits(0x7FF0_0000_0000_0001);
        assert!(weird.is_nan());
        let enc = encode_value(&Value::Float(weird)).unwrap();
        assert_eq!(enc, vec![0x02, 0x7F, 0xF8, 0, 0, 0, 0, 0, 0]);
        assert_eq!(decode_value(&enc).unwrap(), Value::Float(f64::NAN));
        let mut bad = enc.clone();
        bad[8] = 1;
        assert!(matches!(decode_value(&bad), Err(CodecError::Malformed(_))));
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(matches!(decode_value(&[0xFF, 0]), Err(CodecError::Malformed(_))));
        assert!(matches!(decode_value(&[0x01, 0, 0]), Err(CodecError::Malformed(_))));
        assert!(matches!(decode_value(&[]), Err(CodecError::Malformed(_))));
        let mut trailing = encode_value(&Value::Int(3)).unwrap();
        trailing.push(0);
        assert!(matches!(decode_value(&trailing), Err(CodecError::Malformed(_))));
        assert!(matches!(decode_value(&[0x04, 0, 0, 0, 1, 0xFF]), Err(CodecError::Malformed(_))));
    }

    #[test]
    fn depth_bound() {
        let ok = nested(MAX_DEPTH);
        assert_eq!(ok.depth(), MAX_DEPTH);
        let enc = encode_value(&ok).unwrap();
        assert_eq!(decode_value(&enc).unwrap(), ok);

        let deep = nested(MAX_DEPTH + 1);
        assert_eq!(encode_value(&deep), Err(CodecError::DepthExceeded));
        // hand-built over-deep input must be rejected by the decoder too
        let mut raw = Vec::new();
        for _ in 0..=MAX_DEPTH {
            raw.extend_from_slice(&[0x05, 0, 0, 0, 1]);
        }
        raw.extend_from_slice(&encode_value(&Value::Int(0)).unwrap());
        assert_eq!(decode_value(&raw), Err(CodecError::DepthExceeded));
    }

    #[test]
    fn error_value_convention() {
        let e = Value::error("boom");
        assert_eq!(e.as_error(), Some("boom"));
        assert!(!Value::List(vec![Value::from("x"), Value::from("y")]).is_error());
    }
}
