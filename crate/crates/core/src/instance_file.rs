//! Instance files: a schema version leads every file, followed by either
//! line-delimited JSON records or length-prefixed binary records.
//!
//! Binary layout (little endian): magic `WLI`, version byte, then per record a
//! `u32` payload length and the payload
//! `n | n × (id, s, e) | m | m × mask_pos | k | k × (index, orig_id) | sop:u8 | n_chars`
//! where every field except `sop` is a `u32`.

use std::io::{BufRead, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msp::{PretrainInstance, SopLabel};

pub const SCHEMA_VERSION: u8 = 1;
const MAGIC: &[u8; 3] = b"WLI";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstanceFormat {
    #[serde(rename = "jsonl")]
    Jsonl,
    #[serde(rename = "binary")]
    Binary,
}

impl std::str::FromStr for InstanceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(InstanceFormat::Jsonl),
            "binary" | "bin" => Ok(InstanceFormat::Binary),
            _ => Err(Error::Config(format!("unknown instance format {s:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u8,
}

pub struct InstanceWriter<W: Write> {
    inner: W,
    format: InstanceFormat,
}

impl<W: Write> InstanceWriter<W> {
    pub fn new(mut inner: W, format: InstanceFormat) -> Result<Self> {
        match format {
            InstanceFormat::Jsonl => {
                serde_json::to_writer(&mut inner, &Header { schema_version: SCHEMA_VERSION })?;
                inner.write_all(b"\n")?;
            }
            InstanceFormat::Binary => {
                inner.write_all(MAGIC)?;
                inner.write_u8(SCHEMA_VERSION)?;
            }
        }
        Ok(InstanceWriter { inner, format })
    }

    pub fn write(&mut self, inst: &PretrainInstance) -> Result<()> {
        match self.format {
            InstanceFormat::Jsonl => {
                serde_json::to_writer(&mut self.inner, inst)?;
                self.inner.write_all(b"\n")?;
            }
            InstanceFormat::Binary => {
                let payload = encode_binary(inst)?;
                self.inner.write_u32::<LittleEndian>(payload.len() as u32)?;
                self.inner.write_all(&payload)?;
            }
        }
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InstanceFormat(format!("value {v} does not fit u32")))
}

fn encode_binary(inst: &PretrainInstance) -> Result<Vec<u8>> {
    let mut b = Vec::with_capacity(16 + inst.len() * 12);
    b.write_u32::<LittleEndian>(to_u32(inst.len())?)?;
    for ((&id, &s), &e) in inst.token_ids.iter().zip(&inst.starts).zip(&inst.ends) {
        b.write_u32::<LittleEndian>(id)?;
        b.write_u32::<LittleEndian>(to_u32(s)?)?;
        b.write_u32::<LittleEndian>(to_u32(e)?)?;
    }
    b.write_u32::<LittleEndian>(to_u32(inst.mask_positions.len())?)?;
    for &p in &inst.mask_positions {
        b.write_u32::<LittleEndian>(to_u32(p)?)?;
    }
    b.write_u32::<LittleEndian>(to_u32(inst.msp_targets.len())?)?;
    for &(i, id) in &inst.msp_targets {
        b.write_u32::<LittleEndian>(to_u32(i)?)?;
        b.write_u32::<LittleEndian>(id)?;
    }
    b.write_u8(inst.sop_label as u8)?;
    b.write_u32::<LittleEndian>(to_u32(inst.n_chars)?)?;
    Ok(b)
}

fn decode_binary(mut r: &[u8]) -> Result<PretrainInstance> {
    let bad = |e: std::io::Error| Error::InstanceFormat(format!("truncated record: {e}"));
    let u32_ = |r: &mut &[u8]| r.read_u32::<LittleEndian>().map_err(bad);
    let n = u32_(&mut r)? as usize;
    let mut inst = PretrainInstance {
        token_ids: Vec::with_capacity(n),
        starts: Vec::with_capacity(n),
        ends: Vec::with_capacity(n),
        mask_positions: Vec::new(),
        msp_targets: Vec::new(),
        sop_label: SopLabel::InOrder,
        n_chars: 0,
    };
    for _ in 0..n {
        inst.token_ids.push(u32_(&mut r)?);
        inst.starts.push(u32_(&mut r)? as usize);
        inst.ends.push(u32_(&mut r)? as usize);
    }
    let m = u32_(&mut r)? as usize;
    for _ in 0..m {
        inst.mask_positions.push(u32_(&mut r)? as usize);
    }
    let k = u32_(&mut r)? as usize;
    for _ in 0..k {
        let i = u32_(&mut r)? as usize;
        inst.msp_targets.push((i, u32_(&mut r)?));
    }
    inst.sop_label = match r.read_u8().map_err(bad)? {
        0 => SopLabel::InOrder,
        1 => SopLabel::Swapped,
        x => return Err(Error::InstanceFormat(format!("bad sop label {x}"))),
    };
    inst.n_chars = u32_(&mut r)? as usize;
    if !r.is_empty() {
        return Err(Error::InstanceFormat("trailing bytes in record".into()));
    }
    Ok(inst)
}

/// Read every instance from a file written by [`InstanceWriter`], detecting
/// the format from its header.
pub fn read_instances<R: BufRead>(mut r: R) -> Result<Vec<PretrainInstance>> {
    let head = r.fill_buf()?;
    if head.starts_with(MAGIC) {
        let mut hdr = [0u8; 4];
        r.read_exact(&mut hdr)?;
        check_version(hdr[3])?;
        let mut out = Vec::new();
        loop {
            let len = match r.read_u32::<LittleEndian>() {
                Ok(l) => l as usize,
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            };
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)
                .map_err(|e| Error::InstanceFormat(format!("truncated record: {e}")))?;
            out.push(decode_binary(&buf)?);
        }
        Ok(out)
    } else {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::InstanceFormat("missing schema header".into()))??;
        let header: Header = serde_json::from_str(&first)
            .map_err(|e| Error::InstanceFormat(format!("bad schema header: {e}")))?;
        check_version(header.schema_version)?;
        let mut out = Vec::new();
        for line in lines {
            let line = line?;
            if !line.is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }
}

fn check_version(v: u8) -> Result<()> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::InstanceFormat(format!(
            "schema version {v} is not supported (expected {SCHEMA_VERSION})"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> PretrainInstance {
        PretrainInstance {
            token_ids: vec![0, 9, 2, 1, 7, 1],
            starts: vec![0, 1, 2, 3, 4, 5],
            ends: vec![0, 1, 2, 3, 4, 5],
            mask_positions: vec![2],
            msp_targets: vec![(2, 8)],
            sop_label: SopLabel::Swapped,
            n_chars: 3,
        }
    }

    #[test]
    fn jsonl_header_and_fields() {
        let mut w = InstanceWriter::new(Vec::new(), InstanceFormat::Jsonl).unwrap();
        w.write(&sample()).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(r#"{"schema_version":1}"#));
        assert_eq!(
            lines.next(),
            Some(r#"{"token_ids":[0,9,2,1,7,1],"s_arr":[0,1,2,3,4,5],"e_arr":[0,1,2,3,4,5],"mask_positions":[2],"msp_targets":[[2,8]],"sop_label":"swapped","n_chars":3}"#)
        );
    }

    #[test]
    fn rejects_unknown_version() {
        let err = read_instances(&b"{\"schema_version\":9}\n"[..]).unwrap_err();
        assert!(matches!(err, Error::InstanceFormat(_)));
        let err = read_instances(&b"WLI\x02"[..]).unwrap_err();
        assert!(matches!(err, Error::InstanceFormat(_)));
    }

    #[test]
    fn truncated_binary_record() {
        let mut w = InstanceWriter::new(Vec::new(), InstanceFormat::Binary).unwrap();
        w.write(&sample()).unwrap();
        let mut bytes = w.into_inner();
        bytes.truncate(bytes.len() - 3);
        assert!(read_instances(&bytes[..]).is_err());
    }

    fn arb_instance() -> impl Strategy<Value = PretrainInstance> {
        (1usize..40, any::<bool>(), 0usize..500).prop_flat_map(|(n, swap, n_chars)| {
            (
                prop::collection::vec((any::<u32>(), 0usize..1000, 0usize..1000), n),
                prop::collection::vec((0usize..n, any::<u32>()), 0..n),
            )
                .prop_map(move |(toks, targets)| PretrainInstance {
                    token_ids: toks.iter().map(|t| t.0).collect(),
                    starts: toks.iter().map(|t| t.1).collect(),
                    ends: toks.iter().map(|t| t.2).collect(),
                    mask_positions: targets.iter().map(|t| t.0).collect(),
                    msp_targets: targets,
                    sop_label: if swap { SopLabel::Swapped } else { SopLabel::InOrder },
                    n_chars,
                })
        })
    }

    proptest! {
        #[test]
        fn both_formats_roundtrip(insts in prop::collection::vec(arb_instance(), 0..5)) {
            for format in [InstanceFormat::Jsonl, InstanceFormat::Binary] {
                let mut w = InstanceWriter::new(Vec::new(), format).unwrap();
                for i in &insts {
                    w.write(i).unwrap();
                }
                let bytes = w.into_inner();
                prop_assert_eq!(&read_instances(&bytes[..]).unwrap(), &insts);
            }
        }
    }
}
