//! Binary model checkpoints.
//!
//! Layout: magic + version, the six model dimensions, the input/output
//! vocabulary hashes, the parameter count, then every parameter as
//! little-endian f64 in the pinned `ModelParams::arrays` order.  Loading
//! validates all header fields so a checkpoint can never be decoded
//! against a mismatched vocabulary or architecture.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{ModelDims, ModelParams, Seq2SeqModel};
use super::NnError;

const MAGIC: &[u8; 4] = b"SQGM";
const VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NnError + '_ {
    move |source| NnError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_model(
    path: &Path,
    model: &Seq2SeqModel,
    input_vocab_hash: u64,
    output_vocab_hash: u64,
) -> Result<(), NnError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(io_err(path));
    write(MAGIC)?;
    write(&VERSION.to_le_bytes())?;
    let d = model.dims;
    for dim in [
        d.input_vocab,
        d.output_vocab,
        d.grammar,
        d.embed_in,
        d.embed_out,
        d.hidden,
    ] {
        write(&(dim as u64).to_le_bytes())?;
    }
    write(&input_vocab_hash.to_le_bytes())?;
    write(&output_vocab_hash.to_le_bytes())?;
    write(&(model.params.num_params() as u64).to_le_bytes())?;
    for slice in model.params.arrays() {
        for &v in slice {
            write(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64, NnError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| NnError::Checkpoint(format!("truncated reading {what}: {e}")))?;
    Ok(u64::from_le_bytes(buf))
}

/// Load a checkpoint, verifying it was written for exactly this
/// architecture and vocabulary pair.
pub fn load_model(
    path: &Path,
    dims: ModelDims,
    input_vocab_hash: u64,
    output_vocab_hash: u64,
) -> Result<Seq2SeqModel, NnError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| NnError::Checkpoint(format!("truncated magic: {e}")))?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("not a model checkpoint".into()));
    }
    let mut ver = [0u8; 4];
    r.read_exact(&mut ver)
        .map_err(|e| NnError::Checkpoint(format!("truncated version: {e}")))?;
    if u32::from_le_bytes(ver) != VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            u32::from_le_bytes(ver)
        )));
    }
    let want = [
        ("input vocab", dims.input_vocab as u64),
        ("output vocab", dims.output_vocab as u64),
        ("grammar", dims.grammar as u64),
        ("input embedding", dims.embed_in as u64),
        ("output embedding", dims.embed_out as u64),
        ("hidden", dims.hidden as u64),
    ];
    for (what, expect) in want {
        let got = read_u64(&mut r, what)?;
        if got != expect {
            return Err(NnError::Checkpoint(format!(
                "{what} dimension mismatch: checkpoint has {got}, expected {expect}"
            )));
        }
    }
    for (what, expect) in [
        ("input vocabulary hash", input_vocab_hash),
        ("output vocabulary hash", output_vocab_hash),
    ] {
        let got = read_u64(&mut r, what)?;
        if got != expect {
            return Err(NnError::Checkpoint(format!(
                "{what} mismatch: checkpoint {got:#018x}, expected {expect:#018x}"
            )));
        }
    }

    // shapes are a function of the dimensions; seed value is irrelevant
    // because every parameter is overwritten below
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ModelParams::new(&dims, &mut rng);
    let count = read_u64(&mut r, "parameter count")? as usize;
    if count != params.num_params() {
        return Err(NnError::Checkpoint(format!(
            "parameter count mismatch: checkpoint has {count}, model needs {}",
            params.num_params()
        )));
    }
    for slice in params.arrays_mut() {
        for v in slice.iter_mut() {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)
                .map_err(|e| NnError::Checkpoint(format!("truncated parameters: {e}")))?;
            *v = f64::from_le_bytes(buf);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| NnError::Checkpoint(e.to_string()))? != 0 {
        return Err(NnError::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(Seq2SeqModel { dims, params })
}
