//! Binary instance container and CSV writers.
//!
//! Instance layout, all integers and reals little-endian:
//!
//! ```text
//! magic        8 bytes  "ABNBKINS"
//! version      u32      1
//! m, n         u64, u64
//! has_spec     u8       0 | 1
//!   kind       u8       0 gaussian | 1 dct
//!   sp         f64
//!   seed       u64
//! forms        u8       0 zero | 1 dense (m·n² reals) | 2 dct seeds (m·n reals)
//!   payload    f64[..]
//! b            f64[m·n]
//! c            f64[m]
//! has_truth    u8       0 | 1
//!   truth      f64[n]
//! ```
//!
//! Reals are stored as raw IEEE-754 bits, so a write/read cycle is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::generators::{GeneratorKind, GeneratorSpec, ProblemInstance};
use crate::solver::RunRecord;
use crate::systems::{NonlinearSystem, QuadraticForms, QuadraticSystem};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"ABNBKINS";
const VERSION: u32 = 1;

/// Fixed header of the per-iteration history CSV.
pub const HISTORY_HEADER: [&str; 7] = [
    "k",
    "rel_res_sq",
    "sol_err",
    "bregman",
    "block_size",
    "alpha_k",
    "elapsed_ns",
];

pub fn encode_instance<W: Write>(inst: &ProblemInstance, w: &mut W) -> std::io::Result<()> {
    let sys = &inst.system;
    let (m, n) = (sys.num_equations(), sys.num_unknowns());
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(m as u64).to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;
    match &inst.spec {
        Some(spec) => {
            w.write_all(&[1])?;
            w.write_all(&[match spec.kind {
                GeneratorKind::Gaussian => 0,
                GeneratorKind::Dct => 1,
            }])?;
            w.write_all(&spec.sp.to_le_bytes())?;
            w.write_all(&spec.seed.to_le_bytes())?;
        }
        None => w.write_all(&[0])?,
    }
    match sys.forms() {
        QuadraticForms::Zero => w.write_all(&[0])?,
        QuadraticForms::Dense(a) => {
            w.write_all(&[1])?;
            write_reals(w, a)?;
        }
        QuadraticForms::Dct(xi) => {
            w.write_all(&[2])?;
            write_reals(w, xi)?;
        }
    }
    write_reals(w, sys.linear_terms())?;
    write_reals(w, sys.offsets())?;
    match &inst.truth {
        Some(t) => {
            w.write_all(&[1])?;
            write_reals(w, t)?;
        }
        None => w.write_all(&[0])?,
    }
    Ok(())
}

fn write_reals<W: Write>(w: &mut W, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

struct Decoder<R> {
    inner: R,
}

impl<R: Read> Decoder<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated while reading {what}: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes::<1>(what)?[0])
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }

    fn reals(&mut self, len: usize, what: &str) -> Result<Vec<f64>> {
        (0..len).map(|_| self.f64(what)).collect()
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            t => Err(Error::Format(format!("bad {what} flag {t}"))),
        }
    }
}

pub fn decode_instance<R: Read>(r: R) -> Result<ProblemInstance> {
    let mut d = Decoder { inner: r };
    if &d.bytes::<8>("magic")? != MAGIC {
        return Err(Error::Format("not an instance file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(d.bytes("version")?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let m = d.u64("m")? as usize;
    let n = d.u64("n")? as usize;
    let spec = if d.flag("spec")? {
        let kind = match d.u8("kind")? {
            0 => GeneratorKind::Gaussian,
            1 => GeneratorKind::Dct,
            t => return Err(Error::Format(format!("unknown generator kind tag {t}"))),
        };
        let sp = d.f64("sp")?;
        let seed = d.u64("seed")?;
        Some(GeneratorSpec { kind, m, n, sp, seed })
    } else {
        None
    };
    let forms = match d.u8("forms")? {
        0 => QuadraticForms::Zero,
        1 => QuadraticForms::Dense(d.reals(m * n * n, "dense forms")?),
        2 => QuadraticForms::Dct(d.reals(m * n, "dct seeds")?),
        t => return Err(Error::Format(format!("unknown forms tag {t}"))),
    };
    let b = d.reals(m * n, "linear terms")?;
    let c = d.reals(m, "offsets")?;
    let truth = if d.flag("truth")? {
        Some(d.reals(n, "truth")?)
    } else {
        None
    };
    let mut trailing = [0u8; 1];
    if d.inner.read(&mut trailing).unwrap_or(0) != 0 {
        return Err(Error::Format("trailing bytes after instance".into()));
    }
    let system = QuadraticSystem::new(m, n, forms, b, c)?;
    Ok(ProblemInstance { system, truth, spec })
}

pub fn write_instance(path: &Path, inst: &ProblemInstance) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_instance(inst, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_instance(path: &Path) -> Result<ProblemInstance> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_instance(BufReader::new(file))
}

/// Writes the convergence history. The `sol_err` and `bregman` columns are
/// dropped when the run had no ground truth.
pub fn write_history_csv<W: Write>(record: &RunRecord, w: W) -> csv::Result<()> {
    let with_truth = record.has_truth_columns();
    let mut out = csv::Writer::from_writer(w);
    let header: Vec<&str> = HISTORY_HEADER
        .iter()
        .copied()
        .filter(|h| with_truth || (*h != "sol_err" && *h != "bregman"))
        .collect();
    out.write_record(&header)?;
    for row in &record.rows {
        let mut fields = vec![row.k.to_string(), row.rel_res_sq.to_string()];
        if with_truth {
            fields.push(row.sol_err.map_or(String::new(), |v| v.to_string()));
            fields.push(row.bregman.map_or(String::new(), |v| v.to_string()));
        }
        fields.push(row.block_size.to_string());
        fields.push(row.alpha.to_string());
        fields.push(row.elapsed_ns.to_string());
        out.write_record(&fields)?;
    }
    out.flush()?;
    Ok(())
}

/// `index,recovered,truth` rows; `truth` is empty when unknown.
pub fn write_signal_csv<W: Write>(recovered: &[f64], truth: Option<&[f64]>, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["index", "recovered", "truth"])?;
    for (j, x) in recovered.iter().enumerate() {
        let t = truth.map_or(String::new(), |t| t[j].to_string());
        out.write_record([j.to_string(), x.to_string(), t])?;
    }
    out.flush()?;
    Ok(())
}
