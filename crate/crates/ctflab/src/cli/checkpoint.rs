//! Binary training checkpoints: full collaborative state plus the hash of
//! the configuration that produced it, integrity-checked end to end.
//!
//! Layout, all integers little-endian, in order:
//!
//! | field            | encoding                                          |
//! |------------------|---------------------------------------------------|
//! | magic            | 8 bytes `CTFCKPT\0`                               |
//! | version          | u32, currently 1                                   |
//! | config hash      | 32 raw bytes (SHA-256 of the canonical config)     |
//! | iteration        | u64                                                |
//! | winner           | u8 flag (0 = none, 1 = some), then u64 index       |
//! | ledger policy    | u8 (0 = reset, 1 = continue)                       |
//! | window start     | u64                                                |
//! | ledger totals    | u32 count, then that many f64                      |
//! | pair count       | u32                                                |
//! | per pair         | pair_id u64, seed u64, iteration u64, teacher      |
//! |                  | parameter block, student parameter block           |
//! | checksum         | 32 bytes: SHA-256 of every preceding byte          |
//!
//! A parameter block is a u32 entry count followed by, per entry in
//! lexicographic name order: the name (u32 length + UTF-8 bytes), the value
//! tensor (u32 rank, u64 extents, f64 values), and a u8 momentum flag
//! followed by the momentum tensor when the flag is 1.
//!
//! Values are stored as exact f64 bits, so save → load → save reproduces
//! the file byte for byte and a resumed run continues on identical
//! parameters. Randomness is derived from `(seed, stream, iteration)`
//! counters, so no generator state needs to be stored: the iteration number
//! is enough to resume every random decision exactly.

use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::binfmt::{
    read_f64, read_string, read_tensor, read_u32, read_u64, write_f64, write_string, write_tensor,
    write_u32, write_u64,
};
use crate::ctf::{CtfState, DpcoLedger, ResetPolicy};
use crate::error::{Error, Result};
use crate::eval::export::write_atomic;
use crate::numerics::params::ParamSet;
use crate::ssod::PairState;

const MAGIC: &[u8; 8] = b"CTFCKPT\0";
const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

/// A saved training state together with the configuration hash it belongs
/// to. Loading never compares the hash itself — the caller decides whether
/// a mismatch is an error or an accepted override.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub state: CtfState,
}

fn write_param_set(buf: &mut Vec<u8>, ps: &ParamSet) -> Result<()> {
    write_u32(buf, ps.len() as u32)?;
    for (name, p) in ps.iter() {
        write_string(buf, name)?;
        write_tensor(buf, &p.value)?;
        match &p.momentum {
            Some(m) => {
                buf.push(1);
                write_tensor(buf, m)?;
            }
            None => buf.push(0),
        }
    }
    Ok(())
}

fn read_param_set<R: Read>(r: &mut R) -> Result<ParamSet> {
    let count = read_u32(r)? as usize;
    if count > 1 << 16 {
        return Err(Error::Checkpoint(format!("parameter count {count} is implausible")));
    }
    let mut ps = ParamSet::new();
    for _ in 0..count {
        let name = read_string(r)?;
        let value = read_tensor(r)?;
        ps.insert(name.clone(), value)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        match flag[0] {
            0 => {}
            1 => {
                let m = read_tensor(r)?;
                ps.get_mut(&name)
                    .expect("entry was just inserted")
                    .momentum = Some(m);
            }
            other => {
                return Err(Error::Checkpoint(format!(
                    "momentum flag must be 0 or 1, got {other}"
                )))
            }
        }
    }
    Ok(ps)
}

/// Serializes a checkpoint to its on-disk bytes (checksum included).
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    write_u32(&mut buf, VERSION)?;
    buf.extend_from_slice(&ckpt.config_hash);
    write_u64(&mut buf, ckpt.state.iteration)?;
    match ckpt.state.winner {
        Some(k) => {
            buf.push(1);
            write_u64(&mut buf, k as u64)?;
        }
        None => {
            buf.push(0);
            write_u64(&mut buf, 0)?;
        }
    }
    let ledger = &ckpt.state.ledger;
    buf.push(match ledger.reset_policy() {
        ResetPolicy::Reset => 0,
        ResetPolicy::Continue => 1,
    });
    write_u64(&mut buf, ledger.window_start)?;
    write_u32(&mut buf, ledger.totals().len() as u32)?;
    for &v in ledger.totals() {
        write_f64(&mut buf, v)?;
    }
    write_u32(&mut buf, ckpt.state.pairs.len() as u32)?;
    for pair in &ckpt.state.pairs {
        write_u64(&mut buf, pair.pair_id as u64)?;
        write_u64(&mut buf, pair.seed)?;
        write_u64(&mut buf, pair.iteration)?;
        write_param_set(&mut buf, &pair.teacher)?;
        write_param_set(&mut buf, &pair.student)?;
    }
    let digest: [u8; 32] = Sha256::digest(&buf).into();
    buf.extend_from_slice(&digest);
    Ok(buf)
}

/// Writes a checkpoint atomically (temp file + rename), creating parent
/// directories as needed.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}

/// Decodes checkpoint bytes, verifying magic, version, trailing checksum,
/// and structural plausibility of every field. Corrupt or truncated input
/// never yields a state.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 32 + CHECKSUM_LEN {
        return Err(Error::Checkpoint(format!(
            "file is {} bytes, too short to be a checkpoint",
            bytes.len()
        )));
    }
    let (body, stored_sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    let digest: [u8; 32] = Sha256::digest(body).into();
    if digest != stored_sum {
        return Err(Error::Checkpoint(
            "checksum mismatch: the file is corrupt or was edited".to_string(),
        ));
    }
    let mut r = body;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}, not a checkpoint file")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads version {VERSION})"
        )));
    }
    let mut config_hash = [0u8; 32];
    r.read_exact(&mut config_hash)?;
    let iteration = read_u64(&mut r)?;
    let mut winner_flag = [0u8; 1];
    r.read_exact(&mut winner_flag)?;
    let winner_idx = read_u64(&mut r)?;
    let winner = match winner_flag[0] {
        0 => None,
        1 => Some(winner_idx as usize),
        other => {
            return Err(Error::Checkpoint(format!("winner flag must be 0 or 1, got {other}")))
        }
    };
    let mut policy_byte = [0u8; 1];
    r.read_exact(&mut policy_byte)?;
    let policy = match policy_byte[0] {
        0 => ResetPolicy::Reset,
        1 => ResetPolicy::Continue,
        other => {
            return Err(Error::Checkpoint(format!(
                "reset policy byte must be 0 or 1, got {other}"
            )))
        }
    };
    let window_start = read_u64(&mut r)?;
    let n_totals = read_u32(&mut r)? as usize;
    if n_totals == 0 || n_totals > 1 << 10 {
        return Err(Error::Checkpoint(format!("ledger size {n_totals} is implausible")));
    }
    let mut totals = Vec::with_capacity(n_totals);
    for _ in 0..n_totals {
        totals.push(read_f64(&mut r)?);
    }
    let ledger = DpcoLedger::from_parts(totals, policy, window_start)
        .map_err(|e| Error::Checkpoint(format!("invalid ledger: {e}")))?;
    let n_pairs = read_u32(&mut r)? as usize;
    if n_pairs != n_totals {
        return Err(Error::Checkpoint(format!(
            "{n_pairs} pairs but ledger tracks {n_totals}"
        )));
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let pair_id = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let pair_iteration = read_u64(&mut r)?;
        let teacher = read_param_set(&mut r)?;
        let student = read_param_set(&mut r)?;
        teacher
            .check_aligned(&student)
            .map_err(|e| Error::Checkpoint(format!("pair {pair_id}: {e}")))?;
        pairs.push(PairState { pair_id, seed, teacher, student, iteration: pair_iteration });
    }
    if let Some(k) = winner {
        if k >= n_pairs {
            return Err(Error::Checkpoint(format!(
                "winner index {k} out of range for {n_pairs} pairs"
            )));
        }
    }
    if !r.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{} unread bytes after the last field",
            r.len()
        )));
    }
    Ok(Checkpoint { config_hash, state: CtfState { pairs, ledger, iteration, winner } })
}

/// Reads and decodes a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctf::CtfConfig;
    use crate::detector::config::DetectorConfig;

    fn sample_checkpoint() -> Checkpoint {
        let cfg = CtfConfig {
            stage_length: 2,
            max_iter: 8,
            labeled_batch: 2,
            unlabeled_batch: 2,
            ..CtfConfig::default()
        };
        let det = DetectorConfig::for_image_size(32, 3, vec![4, 8]).unwrap();
        let mut state = CtfState::new(&cfg, &det).unwrap();
        state.iteration = 5;
        state.winner = Some(1);
        state.ledger.window_start = 5;
        state
            .ledger
            .add_value(0, 1.25, crate::ctf::Phase::Stage1)
            .unwrap();
        Checkpoint { config_hash: [7u8; 32], state }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ckpt = sample_checkpoint();
        let bytes = encode_checkpoint(&ckpt).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.config_hash, ckpt.config_hash);
        assert_eq!(back.state.iteration, ckpt.state.iteration);
        assert_eq!(back.state.winner, ckpt.state.winner);
        assert_eq!(back.state.ledger, ckpt.state.ledger);
        assert_eq!(back.state.pairs.len(), ckpt.state.pairs.len());
        for (a, b) in back.state.pairs.iter().zip(&ckpt.state.pairs) {
            assert_eq!(a.pair_id, b.pair_id);
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.iteration, b.iteration);
            assert!(a.teacher.values_bit_equal(&b.teacher));
            assert!(a.student.values_bit_equal(&b.student));
            assert_eq!(a.teacher, b.teacher, "momentum buffers must survive too");
            assert_eq!(a.student, b.student);
        }
        // encoding the decoded state reproduces the exact same file
        let again = encode_checkpoint(&back).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn save_and_load_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/dir/state.ckpt");
        let ckpt = sample_checkpoint();
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.state.iteration, 5);
        assert_eq!(back.state.winner, Some(1));
    }

    #[test]
    fn momentum_buffers_roundtrip() {
        let mut ckpt = sample_checkpoint();
        let pair = &mut ckpt.state.pairs[0];
        let name = pair.student.names().next().unwrap().clone();
        let shape = pair.student.get(&name).unwrap().value.shape().to_vec();
        let m = crate::numerics::tensor::Tensor::from_fn(&shape, |i| i as f64 * 0.5 - 1.0);
        pair.student.get_mut(&name).unwrap().momentum = Some(m.clone());
        let bytes = encode_checkpoint(&ckpt).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.state.pairs[0].student.get(&name).unwrap().momentum, Some(m));
    }

    #[test]
    fn every_single_byte_flip_is_detected() {
        let ckpt = sample_checkpoint();
        let bytes = encode_checkpoint(&ckpt).unwrap();
        // flipping any byte of the body breaks the checksum; flipping any
        // byte of the checksum mismatches the body — sample positions
        // across the whole file rather than testing all ~100k bytes
        let step = (bytes.len() / 97).max(1);
        for pos in (0..bytes.len()).step_by(step) {
            let mut corrupted = bytes.clone();
            corrupted[pos] ^= 0x40;
            let err = decode_checkpoint(&corrupted).unwrap_err();
            assert!(
                matches!(err, Error::Checkpoint(_)),
                "byte {pos}: wrong error kind {err}"
            );
        }
    }

    #[test]
    fn truncation_and_garbage_are_rejected() {
        let ckpt = sample_checkpoint();
        let bytes = encode_checkpoint(&ckpt).unwrap();
        for keep in [0, 1, 7, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..keep]).is_err(), "kept {keep} bytes");
        }
        assert!(decode_checkpoint(&[0u8; 200]).is_err());
        // trailing junk after a valid file also fails (checksum covers it)
        let mut padded = bytes.clone();
        padded.extend_from_slice(&[0u8; 16]);
        assert!(decode_checkpoint(&padded).is_err());
    }

    #[test]
    fn version_and_magic_mismatches_have_clear_messages() {
        let ckpt = sample_checkpoint();
        let mut bytes = encode_checkpoint(&ckpt).unwrap();
        // bump the version and re-seal the checksum so only the version trips
        bytes[8] = 9;
        let body_len = bytes.len() - CHECKSUM_LEN;
        let digest: [u8; 32] = Sha256::digest(&bytes[..body_len]).into();
        bytes[body_len..].copy_from_slice(&digest);
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");

        let mut bytes = encode_checkpoint(&ckpt).unwrap();
        bytes[0] = b'X';
        let body_len = bytes.len() - CHECKSUM_LEN;
        let digest: [u8; 32] = Sha256::digest(&bytes[..body_len]).into();
        bytes[body_len..].copy_from_slice(&digest);
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn winner_out_of_range_is_rejected() {
        let mut ckpt = sample_checkpoint();
        ckpt.state.winner = Some(9);
        let bytes = encode_checkpoint(&ckpt).unwrap();
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }
}
