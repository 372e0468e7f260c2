//! Bit-exact binary persistence for run state.
//!
//! Layout: magic `CPG1`, a u32 format version, a little-endian payload
//! (network layout, flat parameters, owner tags, per-task records, seeds),
//! and a trailing CRC32 over the payload. Saving a loaded state reproduces
//! the original file byte for byte.

use std::path::Path;

use crate::controller::{CpgState, GrowthPolicy, TaskRecord};
use crate::error::{Error, Result};
use crate::ledger::Ledger;
use crate::mask::{pack_bits, unpack_bits, FrozenMask};
use crate::nn::{LayerIndex, LayerKind, LayerSpec, Network};
use crate::prune::{AccuracyGoal, GoalSource};
use crate::report::write_atomic;
use crate::session::HeadParams;

const MAGIC: &[u8; 4] = b"CPG1";
const VERSION: u32 = 1;

fn kind_to_byte(kind: LayerKind) -> u8 {
    match kind {
        LayerKind::Dense => 0,
        LayerKind::Relu => 1,
        LayerKind::Head => 2,
    }
}

fn kind_from_byte(b: u8) -> Result<LayerKind> {
    match b {
        0 => Ok(LayerKind::Dense),
        1 => Ok(LayerKind::Relu),
        2 => Ok(LayerKind::Head),
        _ => Err(Error::Format(format!("unknown layer kind {b}"))),
    }
}

fn source_to_byte(s: GoalSource) -> u8 {
    match s {
        GoalSource::Explicit => 0,
        GoalSource::Avg => 1,
        GoalSource::Max => 2,
        GoalSource::Top => 3,
    }
}

fn source_from_byte(b: u8) -> Result<GoalSource> {
    match b {
        0 => Ok(GoalSource::Explicit),
        1 => Ok(GoalSource::Avg),
        2 => Ok(GoalSource::Max),
        3 => Ok(GoalSource::Top),
        _ => Err(Error::Format(format!("unknown goal source {b}"))),
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, at: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated section".into()))?;
        let out = &self.buf[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len_u64(&mut self, what: &str) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| Error::Format(format!("{what} count overflows")))
    }

    fn done(&self) -> bool {
        self.at == self.buf.len()
    }
}

fn encode_payload(state: &CpgState) -> Vec<u8> {
    let mut w = Writer::new();
    w.u64(state.run_seed());
    w.u64(state.n0() as u64);
    let policy = state.policy();
    w.f32(policy.increment_fraction);
    w.f32(policy.max_expansion);
    w.u32(policy.max_retries as u32);

    let net = state.net();
    w.u32(net.specs().len() as u32);
    for (spec, li) in net.specs().iter().zip(net.layer_index()) {
        w.u8(kind_to_byte(spec.kind));
        w.u32(spec.in_width as u32);
        w.u32(spec.out_width as u32);
        w.u8(u8::from(spec.has_bias));
        w.u64(li.weight.len() as u64);
        for &i in &li.weight {
            w.u32(i);
        }
        w.u64(li.bias.len() as u64);
        for &i in &li.bias {
            w.u32(i);
        }
    }

    w.u64(net.n_params() as u64);
    for &p in net.params() {
        w.f32(p);
    }
    w.u64(state.ledger().len() as u64);
    for &o in state.ledger().owners() {
        w.u16(o);
    }

    w.u16(state.ledger().committed_tasks());
    w.u32(state.tasks().len() as u32);
    for record in state.tasks() {
        w.u16(record.task_id);
        w.u64(record.mask.len() as u64);
        w.bytes(&pack_bits(record.mask.bits()));
        w.u32(record.head.in_width as u32);
        w.u32(record.head.classes as u32);
        for &v in &record.head.weights {
            w.f32(v);
        }
        for &v in &record.head.bias {
            w.f32(v);
        }
        w.f32(record.goal.value);
        w.u8(source_to_byte(record.goal.source));
        w.f32(record.achieved);
        w.u8(u8::from(record.best_effort));
        w.u64(record.owned_count as u64);
    }
    w.buf
}

/// Serializes the state to its checkpoint byte image.
pub fn encode(state: &CpgState) -> Vec<u8> {
    let payload = encode_payload(state);
    let mut out = Vec::with_capacity(payload.len() + 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

/// Parses a checkpoint byte image, verifying magic, version, checksum, and
/// structural consistency.
pub fn decode(bytes: &[u8]) -> Result<CpgState> {
    if bytes.len() < 12 {
        return Err(Error::Format("file too short".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let payload = &bytes[8..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(payload) != stored_crc {
        return Err(Error::ChecksumMismatch);
    }

    let mut r = Reader::new(payload);
    let run_seed = r.u64()?;
    let n0 = r.len_u64("initial parameter")?;
    let policy = GrowthPolicy {
        increment_fraction: r.f32()?,
        max_expansion: r.f32()?,
        max_retries: r.u32()? as usize,
    };

    let n_layers = r.u32()? as usize;
    let mut specs = Vec::with_capacity(n_layers);
    let mut index = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind = kind_from_byte(r.u8()?)?;
        let in_width = r.u32()? as usize;
        let out_width = r.u32()? as usize;
        let has_bias = r.u8()? != 0;
        specs.push(LayerSpec {
            kind,
            in_width,
            out_width,
            has_bias,
        });
        let n_w = r.len_u64("weight index")?;
        let mut weight = Vec::with_capacity(n_w);
        for _ in 0..n_w {
            weight.push(r.u32()?);
        }
        let n_b = r.len_u64("bias index")?;
        let mut bias = Vec::with_capacity(n_b);
        for _ in 0..n_b {
            bias.push(r.u32()?);
        }
        index.push(LayerIndex { weight, bias });
    }

    let n_params = r.len_u64("parameter")?;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(r.f32()?);
    }
    let net = Network::from_parts(specs, index, params)?;

    let n_owners = r.len_u64("owner")?;
    if n_owners != n_params {
        return Err(Error::Format("owner table size mismatch".into()));
    }
    let mut owners = Vec::with_capacity(n_owners);
    for _ in 0..n_owners {
        owners.push(r.u16()?);
    }
    let committed = r.u16()?;
    let ledger = Ledger::from_parts(owners, committed)?;

    let n_records = r.u32()? as usize;
    if n_records != committed as usize {
        return Err(Error::Format("task record count mismatch".into()));
    }
    let mut tasks = Vec::with_capacity(n_records);
    for t in 0..n_records {
        let task_id = r.u16()?;
        if task_id as usize != t + 1 {
            return Err(Error::Format(format!("task record {t} out of order")));
        }
        let n_bits = r.len_u64("mask bit")?;
        if n_bits != ledger.prior_owned_indices(task_id).len() {
            return Err(Error::Format(format!(
                "task {task_id} mask does not cover its prior-owned weights"
            )));
        }
        let packed = r.take(n_bits.div_ceil(8))?;
        let bits = unpack_bits(packed, n_bits)?;
        let in_width = r.u32()? as usize;
        let classes = r.u32()? as usize;
        if classes < 2 {
            return Err(Error::Format(format!("task {task_id} head has {classes} classes")));
        }
        let mut weights = Vec::with_capacity(in_width * classes);
        for _ in 0..in_width * classes {
            weights.push(r.f32()?);
        }
        let mut bias = Vec::with_capacity(classes);
        for _ in 0..classes {
            bias.push(r.f32()?);
        }
        let goal = AccuracyGoal {
            value: r.f32()?,
            source: source_from_byte(r.u8()?)?,
        };
        let achieved = r.f32()?;
        let best_effort = r.u8()? != 0;
        let owned_count = r.len_u64("owned")?;
        if owned_count != ledger.owned_count(task_id) {
            return Err(Error::Format(format!(
                "task {task_id} owned count disagrees with ledger"
            )));
        }
        tasks.push(TaskRecord {
            task_id,
            mask: FrozenMask::from_bits(bits),
            head: HeadParams {
                in_width,
                classes,
                weights,
                bias,
            },
            goal,
            achieved,
            owned_count,
            best_effort,
        });
    }
    if !r.done() {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    CpgState::from_parts(net, ledger, tasks, policy, n0, run_seed)
}

/// Writes a checkpoint via a temp file plus rename.
pub fn save_checkpoint(state: &CpgState, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode(state))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CpgState> {
    decode(&std::fs::read(path.as_ref())?)
}
