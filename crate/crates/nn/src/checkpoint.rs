//! Binary checkpoint: header, JSON metadata, name/offset index and
//! little-endian `f32` parameter block, followed by optional named sections.
//!
//! ```text
//! magic "ZSIMCKPT" | u32 version | [u8; 32] config hash
//! u32 len + config JSON | u32 len + action table JSON | u32 len + meta JSON
//! u32 entries, each: u32 len + name, u64 offset, u64 len
//! u64 len + f32 parameters
//! u32 sections, each: u32 len + name, u64 len + f32 data
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use zsim_core::dynamics::ActionTable;

use crate::error::{NnError, Result};
use crate::model::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"ZSIMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub actions: ActionTable,
    /// Free-form run metadata (agent steps, seeds, ...).
    pub meta: serde_json::Value,
    pub params: Vec<f32>,
    /// Extra state such as optimizer moments.
    pub sections: Vec<(String, Vec<f32>)>,
}

impl Checkpoint {
    pub fn config_hash(&self) -> String {
        hex::encode(self.config.hash())
    }

    pub fn section(&self, name: &str) -> Option<&[f32]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let model = Model::new(self.config.clone())?;
        if model.num_params() != self.params.len() {
            return Err(NnError::Checkpoint(format!(
                "{} parameters for a model of {}",
                self.params.len(),
                model.num_params()
            )));
        }
        let mut w = BufWriter::new(out);
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(FORMAT_VERSION)?;
        w.write_all(&self.config.hash())?;
        for json in [
            serde_json::to_vec(&self.config),
            serde_json::to_vec(&self.actions),
            serde_json::to_vec(&self.meta),
        ] {
            write_bytes(
                &mut w,
                &json.map_err(|e| NnError::Checkpoint(e.to_string()))?,
            )?;
        }
        w.write_u32::<LE>(model.layout.entries.len() as u32)?;
        for e in &model.layout.entries {
            write_bytes(&mut w, e.name.as_bytes())?;
            w.write_u64::<LE>(e.offset as u64)?;
            w.write_u64::<LE>(e.len() as u64)?;
        }
        write_f32s(&mut w, &self.params)?;
        w.write_u32::<LE>(self.sections.len() as u32)?;
        for (name, data) in &self.sections {
            write_bytes(&mut w, name.as_bytes())?;
            write_f32s(&mut w, data)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<Rd: Read>(input: Rd) -> Result<Self> {
        let mut r = BufReader::new(input);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.read_u32::<LE>()?;
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let mut hash = [0u8; 32];
        r.read_exact(&mut hash)?;
        let config: ModelConfig = parse_json(&read_bytes(&mut r)?)?;
        if config.hash() != hash {
            return Err(bad("config hash mismatch"));
        }
        let actions: ActionTable = parse_json(&read_bytes(&mut r)?)?;
        let meta: serde_json::Value = parse_json(&read_bytes(&mut r)?)?;
        let model = Model::new(config.clone())?;
        let entries = r.read_u32::<LE>()? as usize;
        if entries != model.layout.entries.len() {
            return Err(bad("parameter index does not match the config"));
        }
        for e in &model.layout.entries {
            let name = String::from_utf8(read_bytes(&mut r)?).map_err(|_| bad("non-UTF-8 name"))?;
            let offset = r.read_u64::<LE>()? as usize;
            let len = r.read_u64::<LE>()? as usize;
            if name != e.name || offset != e.offset || len != e.len() {
                return Err(bad(&format!(
                    "index entry {name} does not match {}",
                    e.name
                )));
            }
        }
        let params = read_f32s(&mut r)?;
        if params.len() != model.num_params() {
            return Err(bad("parameter block has the wrong length"));
        }
        let count = r.read_u32::<LE>()? as usize;
        let mut sections = Vec::with_capacity(count);
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(&mut r)?).map_err(|_| bad("non-UTF-8 name"))?;
            sections.push((name, read_f32s(&mut r)?));
        }
        Ok(Self {
            config,
            actions,
            meta,
            params,
            sections,
        })
    }

    /// Writes to a sibling temporary file and renames it into place, so an
    /// interrupted save never leaves a truncated checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        self.write(File::create(&tmp)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(File::open(path)?)
    }
}

fn bad(msg: &str) -> NnError {
    NnError::Checkpoint(msg.to_string())
}

fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| NnError::Checkpoint(e.to_string()))
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_u32::<LE>(bytes.len() as u32)?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_bytes<Rd: Read>(r: &mut Rd) -> Result<Vec<u8>> {
    let len = r.read_u32::<LE>()? as usize;
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(bad("truncated"));
    }
    Ok(buf)
}

fn write_f32s<W: Write>(w: &mut W, data: &[f32]) -> Result<()> {
    w.write_u64::<LE>(data.len() as u64)?;
    for &v in data {
        w.write_f32::<LE>(v)?;
    }
    Ok(())
}

fn read_f32s<Rd: Read>(r: &mut Rd) -> Result<Vec<f32>> {
    let len = r.read_u64::<LE>()? as usize;
    let mut buf = Vec::new();
    r.take(len as u64 * 4).read_to_end(&mut buf)?;
    if buf.len() != len * 4 {
        return Err(bad("truncated"));
    }
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
