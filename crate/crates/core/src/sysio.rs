//! System interchange: Matrix Market files plus a small key=value manifest.
//!
//! A manifest lists the block layout, sizes, and one file per matrix or
//! vector, with paths resolved relative to the manifest itself. The velocity
//! operator is stored in symmetric coordinate format and re-verified on
//! import; everything round-trips bitwise.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::mm::{read_array, read_coordinate, write_array, write_coordinate, MmError};
use crate::stokes::{Stokes2x2System, Stokes3x3System};

#[derive(Debug, Error)]
pub enum SysIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mm(#[from] MmError),
    #[error("manifest missing key {0}")]
    MissingKey(&'static str),
    #[error("bad value for {key}: {value}")]
    BadValue { key: &'static str, value: String },
    #[error("inconsistent dimensions: {what}")]
    Dimension { what: String },
    #[error("velocity operator asymmetric: {max_asym:.3e} exceeds {tol:.3e}")]
    Asymmetric { max_asym: f64, tol: f64 },
    #[error("unknown format {0:?}")]
    UnknownFormat(String),
}

#[derive(Debug)]
pub enum ImportedSystem {
    ThreeByThree(Stokes3x3System),
    TwoByTwo(Stokes2x2System),
}

const MANIFEST_NAME: &str = "manifest.txt";

/// Writes the system and its manifest into `dir`, returning the manifest
/// path.
pub fn export_system(sys: &Stokes3x3System, dir: &Path) -> Result<PathBuf, SysIoError> {
    fs::create_dir_all(dir)?;
    write_coordinate(&dir.join("a.mtx"), &sys.a, true)?;
    write_coordinate(&dir.join("bx.mtx"), &sys.bx, false)?;
    write_coordinate(&dir.join("by.mtx"), &sys.by, false)?;
    write_array(&dir.join("f_x.mtx"), &sys.f_x)?;
    write_array(&dir.join("f_y.mtx"), &sys.f_y)?;
    write_array(&dir.join("g.mtx"), &sys.g)?;
    write_array(&dir.join("q_mass.mtx"), &sys.mass_diag)?;
    let mut manifest = String::new();
    manifest.push_str("format=stokes-3x3\n");
    manifest.push_str(&format!("label={}\n", sys.label));
    manifest.push_str(&format!("n={}\n", sys.n));
    manifest.push_str(&format!("n_p={}\n", sys.n_p));
    if let Some(p) = sys.pinned_pressure {
        manifest.push_str(&format!("pinned_pressure={p}\n"));
    }
    manifest.push_str("a=a.mtx\nbx=bx.mtx\nby=by.mtx\n");
    manifest.push_str("f_x=f_x.mtx\nf_y=f_y.mtx\ng=g.mtx\nq_mass=q_mass.mtx\n");
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest)?;
    Ok(path)
}

pub fn export_system_2x2(sys: &Stokes2x2System, dir: &Path) -> Result<PathBuf, SysIoError> {
    fs::create_dir_all(dir)?;
    write_coordinate(&dir.join("a2.mtx"), &sys.a2, true)?;
    write_coordinate(&dir.join("b.mtx"), &sys.b, false)?;
    write_array(&dir.join("f.mtx"), &sys.f)?;
    write_array(&dir.join("g.mtx"), &sys.g)?;
    write_array(&dir.join("q_mass.mtx"), &sys.mass_diag)?;
    let mut manifest = String::new();
    manifest.push_str("format=stokes-2x2\n");
    manifest.push_str(&format!("label={}\n", sys.label));
    manifest.push_str(&format!("n_u={}\n", sys.n_u));
    manifest.push_str(&format!("n_p={}\n", sys.n_p));
    if let Some(p) = sys.pinned_pressure {
        manifest.push_str(&format!("pinned_pressure={p}\n"));
    }
    manifest.push_str("a2=a2.mtx\nb=b.mtx\nf=f.mtx\ng=g.mtx\nq_mass=q_mass.mtx\n");
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest)?;
    Ok(path)
}

struct Manifest {
    keys: HashMap<String, String>,
    dir: PathBuf,
}

impl Manifest {
    fn load(path: &Path) -> Result<Manifest, SysIoError> {
        let text = fs::read_to_string(path)?;
        let mut keys = HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                keys.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Ok(Manifest { keys, dir })
    }

    fn require(&self, key: &'static str) -> Result<&str, SysIoError> {
        self.keys
            .get(key)
            .map(String::as_str)
            .ok_or(SysIoError::MissingKey(key))
    }

    fn usize_value(&self, key: &'static str) -> Result<usize, SysIoError> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| SysIoError::BadValue {
            key,
            value: raw.to_string(),
        })
    }

    fn file(&self, key: &'static str) -> Result<PathBuf, SysIoError> {
        Ok(self.dir.join(self.require(key)?))
    }

    fn label(&self) -> String {
        self.keys
            .get("label")
            .cloned()
            .unwrap_or_else(|| "imported".to_string())
    }

    fn pinned(&self) -> Result<Option<usize>, SysIoError> {
        match self.keys.get("pinned_pressure") {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| SysIoError::BadValue {
                    key: "pinned_pressure",
                    value: raw.clone(),
                }),
        }
    }
}

fn check_dim(what: &str, expected: usize, got: usize) -> Result<(), SysIoError> {
    if expected != got {
        return Err(SysIoError::Dimension {
            what: format!("{what}: expected {expected}, got {got}"),
        });
    }
    Ok(())
}

fn check_symmetric(a: &crate::csr::CsrMatrix) -> Result<(), SysIoError> {
    let tol = 1e-10 * a.max_abs().max(1.0);
    let max_asym = a.max_asymmetry();
    if max_asym > tol {
        return Err(SysIoError::Asymmetric { max_asym, tol });
    }
    Ok(())
}

/// Reads a manifest and the files it references.
pub fn import_system(manifest_path: &Path) -> Result<ImportedSystem, SysIoError> {
    let m = Manifest::load(manifest_path)?;
    match m.require("format")? {
        "stokes-3x3" => {
            let n = m.usize_value("n")?;
            let n_p = m.usize_value("n_p")?;
            let a = read_coordinate(&m.file("a")?)?;
            let bx = read_coordinate(&m.file("bx")?)?;
            let by = read_coordinate(&m.file("by")?)?;
            let f_x = read_array(&m.file("f_x")?)?;
            let f_y = read_array(&m.file("f_y")?)?;
            let g = read_array(&m.file("g")?)?;
            let mass_diag = read_array(&m.file("q_mass")?)?;
            check_dim("a rows", n, a.rows)?;
            check_dim("a cols", n, a.cols)?;
            check_dim("bx rows", n_p, bx.rows)?;
            check_dim("bx cols", n, bx.cols)?;
            check_dim("by rows", n_p, by.rows)?;
            check_dim("by cols", n, by.cols)?;
            check_dim("f_x length", n, f_x.len())?;
            check_dim("f_y length", n, f_y.len())?;
            check_dim("g length", n_p, g.len())?;
            check_dim("q_mass length", n_p, mass_diag.len())?;
            check_symmetric(&a)?;
            Ok(ImportedSystem::ThreeByThree(Stokes3x3System {
                a,
                bx,
                by,
                f_x,
                f_y,
                g,
                n,
                n_p,
                mass_diag,
                pinned_pressure: m.pinned()?,
                x_star: None,
                label: m.label(),
            }))
        }
        "stokes-2x2" => {
            let n_u = m.usize_value("n_u")?;
            let n_p = m.usize_value("n_p")?;
            let a2 = read_coordinate(&m.file("a2")?)?;
            let b = read_coordinate(&m.file("b")?)?;
            let f = read_array(&m.file("f")?)?;
            let g = read_array(&m.file("g")?)?;
            let mass_diag = read_array(&m.file("q_mass")?)?;
            check_dim("a2 rows", n_u, a2.rows)?;
            check_dim("a2 cols", n_u, a2.cols)?;
            check_dim("b rows", n_p, b.rows)?;
            check_dim("b cols", n_u, b.cols)?;
            check_dim("f length", n_u, f.len())?;
            check_dim("g length", n_p, g.len())?;
            check_dim("q_mass length", n_p, mass_diag.len())?;
            check_symmetric(&a2)?;
            Ok(ImportedSystem::TwoByTwo(Stokes2x2System {
                a2,
                b,
                f,
                g,
                n_u,
                n_p,
                mass_diag,
                pinned_pressure: m.pinned()?,
                x_star: None,
                label: m.label(),
            }))
        }
        other => Err(SysIoError::UnknownFormat(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csr::CsrMatrix;
    use crate::rng::Xorshift64Star;
    use crate::stokes::{assemble, to_2x2, Domain, Grid};

    fn cavity(level: u32) -> Stokes3x3System {
        assemble(&Grid::new(Domain::Cavity, level).unwrap()).unwrap()
    }

    #[test]
    fn three_by_three_round_trip_is_bitwise() {
        let mut sys = cavity(2);
        sys.set_manufactured_rhs(5);
        let dir = tempfile::tempdir().unwrap();
        let manifest = export_system(&sys, dir.path()).unwrap();
        let ImportedSystem::ThreeByThree(back) = import_system(&manifest).unwrap() else {
            panic!("wrong layout");
        };
        assert_eq!(back.a, sys.a);
        assert_eq!(back.bx, sys.bx);
        assert_eq!(back.by, sys.by);
        assert_eq!(back.f_x, sys.f_x);
        assert_eq!(back.f_y, sys.f_y);
        assert_eq!(back.g, sys.g);
        assert_eq!(back.mass_diag, sys.mass_diag);
        assert_eq!(back.n, sys.n);
        assert_eq!(back.n_p, sys.n_p);
        assert_eq!(back.pinned_pressure, sys.pinned_pressure);
        assert_eq!(back.label, sys.label);
        assert!(back.x_star.is_none());
        let mut rng = Xorshift64Star::new(2);
        let mut v = vec![0.0; sys.total_dim()];
        rng.fill_unit(&mut v);
        assert_eq!(back.apply_original(&v), sys.apply_original(&v));
    }

    #[test]
    fn two_by_two_round_trip_is_bitwise() {
        let mut sys = to_2x2(&cavity(2));
        sys.set_manufactured_rhs(7);
        let dir = tempfile::tempdir().unwrap();
        let manifest = export_system_2x2(&sys, dir.path()).unwrap();
        let ImportedSystem::TwoByTwo(back) = import_system(&manifest).unwrap() else {
            panic!("wrong layout");
        };
        assert_eq!(back.a2, sys.a2);
        assert_eq!(back.b, sys.b);
        assert_eq!(back.f, sys.f);
        assert_eq!(back.g, sys.g);
        assert_eq!(back.mass_diag, sys.mass_diag);
        assert_eq!(back.pinned_pressure, sys.pinned_pressure);
        let mut rng = Xorshift64Star::new(3);
        let mut v = vec![0.0; sys.total_dim()];
        rng.fill_unit(&mut v);
        assert_eq!(back.apply_original(&v), sys.apply_original(&v));
    }

    #[test]
    fn missing_keys_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_NAME);
        fs::write(&path, "format=stokes-3x3\nn=4\nn_p=2\n").unwrap();
        assert!(matches!(
            import_system(&path),
            Err(SysIoError::MissingKey("a"))
        ));
    }

    #[test]
    fn unknown_formats_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_NAME);
        fs::write(&path, "format=stokes-9x9\n").unwrap();
        assert!(matches!(
            import_system(&path),
            Err(SysIoError::UnknownFormat(s)) if s == "stokes-9x9"
        ));
    }

    #[test]
    fn bad_numbers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_NAME);
        fs::write(&path, "format=stokes-3x3\nn=four\n").unwrap();
        assert!(matches!(
            import_system(&path),
            Err(SysIoError::BadValue { key: "n", .. })
        ));
    }

    #[test]
    fn tampered_velocity_operator_fails_the_symmetry_check() {
        let sys = cavity(2);
        let dir = tempfile::tempdir().unwrap();
        let manifest = export_system(&sys, dir.path()).unwrap();
        let mut t: Vec<(usize, usize, f64)> = vec![(0, 1, 0.5)];
        for i in 0..sys.n {
            t.push((i, i, 1.0));
        }
        let bad = CsrMatrix::from_triplets(sys.n, sys.n, t).unwrap();
        write_coordinate(&dir.path().join("a.mtx"), &bad, false).unwrap();
        assert!(matches!(
            import_system(&manifest),
            Err(SysIoError::Asymmetric { .. })
        ));
    }

    #[test]
    fn truncated_vectors_fail_the_dimension_check() {
        let sys = cavity(2);
        let dir = tempfile::tempdir().unwrap();
        let manifest = export_system(&sys, dir.path()).unwrap();
        write_array(&dir.path().join("g.mtx"), &sys.g[..sys.n_p - 1]).unwrap();
        assert!(matches!(
            import_system(&manifest),
            Err(SysIoError::Dimension { .. })
        ));
    }
}
