//! Decoder for the subset of the ONNX protobuf schema needed to run a
//! feed-forward graph: model, graph, node, attribute, tensor and value info.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeError(pub String);

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

type Result<T> = std::result::Result<T, DecodeError>;

fn err<T>(msg: impl Into<String>) -> Result<T> {
    Err(DecodeError(msg.into()))
}

enum Value<'a> {
    Varint(u64),
    Fixed64([u8; 8]),
    Bytes(&'a [u8]),
    Fixed32([u8; 4]),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn varint(&mut self) -> Result<u64> {
        let mut out = 0u64;
        for shift in (0..64).step_by(7) {
            let Some(&b) = self.buf.get(self.pos) else {
                return err("truncated varint");
            };
            self.pos += 1;
            out |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Ok(out);
            }
        }
        err("varint too long")
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return err("truncated field");
        };
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn next(&mut self) -> Result<Option<(u32, Value<'a>)>> {
        if self.pos >= self.buf.len() {
            return Ok(None);
        }
        let key = self.varint()?;
        let field = (key >> 3) as u32;
        let value = match key & 7 {
            0 => Value::Varint(self.varint()?),
            1 => Value::Fixed64(self.take(8)?.try_into().unwrap()),
            2 => {
                let len = self.varint()? as usize;
                Value::Bytes(self.take(len)?)
            }
            5 => Value::Fixed32(self.take(4)?.try_into().unwrap()),
            w => return err(format!("unsupported wire type {w}")),
        };
        Ok(Some((field, value)))
    }
}

fn string(v: &Value) -> Result<String> {
    match v {
        Value::Bytes(b) => {
            String::from_utf8(b.to_vec()).map_err(|_| DecodeError("invalid utf-8".into()))
        }
        _ => err("expected a string field"),
    }
}

fn int(v: &Value) -> Result<i64> {
    match v {
        Value::Varint(x) => Ok(*x as i64),
        _ => err("expected an integer field"),
    }
}

fn float(v: &Value) -> Result<f32> {
    match v {
        Value::Fixed32(b) => Ok(f32::from_le_bytes(*b)),
        _ => err("expected a float field"),
    }
}

/// Repeated varints, packed or not.
fn push_ints(v: &Value, out: &mut Vec<i64>) -> Result<()> {
    match v {
        Value::Bytes(b) => {
            let mut r = Reader::new(b);
            while r.pos < b.len() {
                out.push(r.varint()? as i64);
            }
            Ok(())
        }
        other => {
            out.push(int(other)?);
            Ok(())
        }
    }
}

/// Repeated 32-bit floats, packed or not.
fn push_floats(v: &Value, out: &mut Vec<f32>) -> Result<()> {
    match v {
        Value::Bytes(b) => {
            if b.len() % 4 != 0 {
                return err("packed float field has odd length");
            }
            out.extend(
                b.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
            );
            Ok(())
        }
        other => {
            out.push(float(other)?);
            Ok(())
        }
    }
}

fn push_doubles(v: &Value, out: &mut Vec<f64>) -> Result<()> {
    match v {
        Value::Bytes(b) => {
            if b.len() % 8 != 0 {
                return err("packed double field has odd length");
            }
            out.extend(
                b.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap())),
            );
            Ok(())
        }
        Value::Fixed64(b) => {
            out.push(f64::from_le_bytes(*b));
            Ok(())
        }
        _ => err("expected a double field"),
    }
}

pub const DTYPE_FLOAT: i32 = 1;
pub const DTYPE_INT32: i32 = 6;
pub const DTYPE_INT64: i32 = 7;
pub const DTYPE_DOUBLE: i32 = 11;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorProto {
    pub name: String,
    pub dims: Vec<i64>,
    pub data_type: i32,
    pub float_data: Vec<f32>,
    pub int32_data: Vec<i64>,
    pub int64_data: Vec<i64>,
    pub double_data: Vec<f64>,
    pub raw_data: Vec<u8>,
}

impl TensorProto {
    fn decode(buf: &[u8]) -> Result<Self> {
        let mut t = TensorProto::default();
        let mut r = Reader::new(buf);
        while let Some((field, v)) = r.next()? {
            match field {
                1 => push_ints(&v, &mut t.dims)?,
                2 => t.data_type = int(&v)? as i32,
                4 => push_floats(&v, &mut t.float_data)?,
                5 => push_ints(&v, &mut t.int32_data)?,
                7 => push_ints(&v, &mut t.int64_data)?,
                8 => t.name = string(&v)?,
                9 => match v {
                    Value::Bytes(b) => t.raw_data = b.to_vec(),
                    _ => return err("raw_data must be bytes"),
                },
                10 => push_doubles(&v, &mut t.double_data)?,
                13 => return err(format!("tensor '{}' uses external data", t.name)),
                _ => {}
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttributeValue {
    Float(f32),
    Int(i64),
    String(String),
    Tensor(TensorProto),
    Floats(Vec<f32>),
    Ints(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeProto {
    pub name: String,
    pub value: AttributeValue,
}

const ATTR_FLOAT: i64 = 1;
const ATTR_INT: i64 = 2;
const ATTR_STRING: i64 = 3;
const ATTR_TENSOR: i64 = 4;
const ATTR_FLOATS: i64 = 6;
const ATTR_INTS: i64 = 7;

impl AttributeProto {
    fn decode(buf: &[u8]) -> Result<Self> {
        let mut name = String::new();
        let mut kind = 0;
        let (mut f, mut i, mut s, mut t) = (None, None, None, None);
        let (mut floats, mut ints) = (Vec::new(), Vec::new());
        let mut r = Reader::new(buf);
        while let Some((field, v)) = r.next()? {
            match field {
                1 => name = string(&v)?,
                2 => f = Some(float(&v)?),
                3 => i = Some(int(&v)?),
                4 => s = Some(string(&v)?),
                5 => match v {
                    Value::Bytes(b) => t = Some(TensorProto::decode(b)?),
                    _ => return err("tensor attribute must be bytes"),
                },
                7 => push_floats(&v, &mut floats)?,
                8 => push_ints(&v, &mut ints)?,
                20 => kind = int(&v)?,
                _ => {}
            }
        }
        let value = match kind {
            ATTR_FLOAT => AttributeValue::Float(f.unwrap_or(0.0)),
            ATTR_INT => AttributeValue::Int(i.unwrap_or(0)),
            ATTR_STRING => AttributeValue::String(s.unwrap_or_default()),
            ATTR_TENSOR => match t {
                Some(t) => AttributeValue::Tensor(t),
                None => return err(format!("attribute '{name}' has no tensor")),
            },
            ATTR_FLOATS => AttributeValue::Floats(floats),
            ATTR_INTS => AttributeValue::Ints(ints),
            other => return err(format!("attribute '{name}' has unsupported type {other}")),
        };
        Ok(AttributeProto { name, value })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeProto {
    pub name: String,
    pub op_type: String,
    pub domain: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub attributes: Vec<AttributeProto>,
}

impl NodeProto {
    fn decode(buf: &[u8]) -> Result<Self> {
        let mut n = NodeProto::default();
        let mut r = Reader::new(buf);
        while let Some((field, v)) = r.next()? {
            match field {
                1 => n.inputs.push(string(&v)?),
                2 => n.outputs.push(string(&v)?),
                3 => n.name = string(&v)?,
                4 => n.op_type = string(&v)?,
                5 => match v {
                    Value::Bytes(b) => n.attributes.push(AttributeProto::decode(b)?),
                    _ => return err("attribute must be a message"),
                },
                7 => n.domain = string(&v)?,
                _ => {}
            }
        }
        Ok(n)
    }

    pub fn attr(&self, name: &str) -> Option<&AttributeValue> {
        self.attributes
            .iter()
            .find(|a| a.name == name)
            .map(|a| &a.value)
    }
}

/// One declared dimension: a fixed size, a symbolic name, or unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dim {
    Value(i64),
    Param(String),
    Unknown,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValueInfoProto {
    pub name: String,
    /// `None` when the value is not a tensor.
    pub elem_type: Option<i32>,
    /// `None` when the rank is not declared.
    pub shape: Option<Vec<Dim>>,
}

impl ValueInfoProto {
    fn decode(buf: &[u8]) -> Result<Self> {
        let mut info = ValueInfoProto::default();
        let mut r = Reader::new(buf);
        while let Some((field, v)) = r.next()? {
            match (field, v) {
                (1, v) => info.name = string(&v)?,
                (2, Value::Bytes(type_proto)) => {
                    let mut tr = Reader::new(type_proto);
                    while let Some((tf, tv)) = tr.next()? {
                        if let (1, Value::Bytes(tensor_type)) = (tf, tv) {
                            decode_tensor_type(tensor_type, &mut info)?;
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(info)
    }
}

fn decode_tensor_type(buf: &[u8], info: &mut ValueInfoProto) -> Result<()> {
    info.elem_type = Some(0);
    let mut r = Reader::new(buf);
    while let Some((field, v)) = r.next()? {
        match (field, v) {
            (1, v) => info.elem_type = Some(int(&v)? as i32),
            (2, Value::Bytes(shape)) => {
                let mut dims = Vec::new();
                let mut sr = Reader::new(shape);
                while let Some((sf, sv)) = sr.next()? {
                    if let (1, Value::Bytes(dim)) = (sf, sv) {
                        let mut d = Dim::Unknown;
                        let mut dr = Reader::new(dim);
                        while let Some((df, dv)) = dr.next()? {
                            match df {
                                1 => d = Dim::Value(int(&dv)?),
                                2 => d = Dim::Param(string(&dv)?),
                                _ => {}
                            }
                        }
                        dims.push(d);
                    }
                }
                info.shape = Some(dims);
            }
            _ => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphProto {
    pub name: String,
    pub nodes: Vec<NodeProto>,
    pub initializers: Vec<TensorProto>,
    pub inputs: Vec<ValueInfoProto>,
    pub outputs: Vec<ValueInfoProto>,
}

impl GraphProto {
    fn decode(buf: &[u8]) -> Result<Self> {
        let mut g = GraphProto::default();
        let mut r = Reader::new(buf);
        while let Some((field, v)) = r.next()? {
            let Value::Bytes(b) = v else {
                continue;
            };
            match field {
                1 => g.nodes.push(NodeProto::decode(b)?),
                2 => g.name = string(&Value::Bytes(b))?,
                5 => g.initializers.push(TensorProto::decode(b)?),
                11 => g.inputs.push(ValueInfoProto::decode(b)?),
                12 => g.outputs.push(ValueInfoProto::decode(b)?),
                _ => {}
            }
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelProto {
    pub ir_version: i64,
    pub producer_name: String,
    /// `(domain, version)`; the default domain is the empty string.
    pub opsets: Vec<(String, i64)>,
    pub graph: Option<GraphProto>,
}

impl ModelProto {
    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut m = ModelProto::default();
        let mut r = Reader::new(buf);
        while let Some((field, v)) = r.next()? {
            match field {
                1 => m.ir_version = int(&v)?,
                2 => m.producer_name = string(&v)?,
                7 => match v {
                    Value::Bytes(b) => m.graph = Some(GraphProto::decode(b)?),
                    _ => return err("graph must be a message"),
                },
                8 => match v {
                    Value::Bytes(b) => {
                        let (mut domain, mut version) = (String::new(), 0);
                        let mut or = Reader::new(b);
                        while let Some((of, ov)) = or.next()? {
                            match of {
                                1 => domain = string(&ov)?,
                                2 => version = int(&ov)?,
                                _ => {}
                            }
                        }
                        m.opsets.push((domain, version));
                    }
                    _ => return err("opset_import must be a message"),
                },
                _ => {}
            }
        }
        Ok(m)
    }
}
