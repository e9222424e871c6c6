//! Out-of-core scan access through a fixed-capacity LRU buffer with disk
//! backing, plus scan, manifest, and pose-file I/O.

use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::geometry::{PoseKnot, Rotation, ScanWindow};
use crate::pointcloud::{estimate_normals, grid_subsample, NormalParams, Scan, TimedPoint};

pub const SCAN_MAGIC: [u8; 4] = *b"CTBA";
pub const SCAN_VERSION: u32 = 1;
const FLAG_NORMALS: u32 = 1;
const HEADER_LEN: u64 = 36;
const POINT_LEN: u64 = 32;
const NORMAL_LEN: u64 = 24;

/// One manifest row describing a scan file on disk.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub file: String,
    pub points: u64,
    pub t_b: f64,
    pub t_e: f64,
    pub session_id: u32,
}

/// Dataset index: scans, timing, and session layout without opening files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct Manifest {
    pub scans: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Manifest> {
        let path = root.join("manifest.json");
        let data = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&data)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join("manifest.json");
        let data = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Manifest(e.to_string()))?;
        fs::write(&path, data).map_err(|e| io_err(&path, e))
    }

    fn validate(&self) -> Result<()> {
        for (i, entry) in self.scans.iter().enumerate() {
            if entry.index != i {
                return Err(Error::Manifest(format!(
                    "scan indices must be contiguous from 0: entry {i} has index {}",
                    entry.index
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    /// Scan windows in index order, for trajectory wiring.
    pub fn windows(&self) -> Vec<ScanWindow> {
        self.scans
            .iter()
            .map(|s| ScanWindow {
                t_b: s.t_b,
                t_e: s.t_e,
                session_id: s.session_id,
            })
            .collect()
    }
}

pub fn scan_file_name(index: usize) -> String {
    format!("scan_{index}.ctba")
}

/// Writes a scan in the binary format (little-endian).
pub fn write_scan(path: &Path, scan: &Scan) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let wrap = |e: std::io::Error| io_err(path, e);
    w.write_all(&SCAN_MAGIC).map_err(wrap)?;
    w.write_u32::<LittleEndian>(SCAN_VERSION).map_err(wrap)?;
    w.write_u64::<LittleEndian>(scan.points.len() as u64)
        .map_err(wrap)?;
    w.write_f64::<LittleEndian>(scan.t_b).map_err(wrap)?;
    w.write_f64::<LittleEndian>(scan.t_e).map_err(wrap)?;
    let flags = if scan.normals.is_some() { FLAG_NORMALS } else { 0 };
    w.write_u32::<LittleEndian>(flags).map_err(wrap)?;
    for p in &scan.points {
        w.write_f64::<LittleEndian>(p.position.x).map_err(wrap)?;
        w.write_f64::<LittleEndian>(p.position.y).map_err(wrap)?;
        w.write_f64::<LittleEndian>(p.position.z).map_err(wrap)?;
        w.write_f64::<LittleEndian>(p.timestamp).map_err(wrap)?;
    }
    if let Some(normals) = &scan.normals {
        for n in normals {
            w.write_f64::<LittleEndian>(n.x).map_err(wrap)?;
            w.write_f64::<LittleEndian>(n.y).map_err(wrap)?;
            w.write_f64::<LittleEndian>(n.z).map_err(wrap)?;
        }
    }
    w.flush().map_err(wrap)
}

/// Reads one scan file; `index` is assigned by the caller (from the
/// manifest or file name), it is not stored in the format.
pub fn read_scan(path: &Path, index: usize) -> Result<Scan> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let actual_len = file.metadata().map_err(|e| io_err(path, e))?.len();
    let mut r = BufReader::new(file);

    let fmt = |offset: u64, what: String| Error::ScanFormat {
        path: path.to_path_buf(),
        offset,
        what,
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| fmt(0, "file shorter than header".into()))?;
    if magic != SCAN_MAGIC {
        return Err(fmt(0, format!("bad magic {magic:?}, expected {SCAN_MAGIC:?}")));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| fmt(4, "truncated header".into()))?;
    if version != SCAN_VERSION {
        return Err(fmt(4, format!("unsupported version {version}")));
    }
    let count = r
        .read_u64::<LittleEndian>()
        .map_err(|_| fmt(8, "truncated header".into()))?;
    let t_b = r
        .read_f64::<LittleEndian>()
        .map_err(|_| fmt(16, "truncated header".into()))?;
    let t_e = r
        .read_f64::<LittleEndian>()
        .map_err(|_| fmt(24, "truncated header".into()))?;
    let flags = r
        .read_u32::<LittleEndian>()
        .map_err(|_| fmt(32, "truncated header".into()))?;
    let has_normals = flags & FLAG_NORMALS != 0;

    let expected = HEADER_LEN
        + count * POINT_LEN
        + if has_normals { count * NORMAL_LEN } else { 0 };
    if actual_len != expected {
        return Err(fmt(
            actual_len,
            format!("expected {expected} bytes, file has {actual_len}"),
        ));
    }

    let mut points = Vec::with_capacity(count as usize);
    for i in 0..count {
        let offset = HEADER_LEN + i * POINT_LEN;
        let trunc = |_| fmt(offset, "truncated point body".into());
        let x = r.read_f64::<LittleEndian>().map_err(trunc)?;
        let y = r.read_f64::<LittleEndian>().map_err(trunc)?;
        let z = r.read_f64::<LittleEndian>().map_err(trunc)?;
        let timestamp = r.read_f64::<LittleEndian>().map_err(trunc)?;
        points.push(TimedPoint {
            position: Vector3::new(x, y, z),
            timestamp,
        });
    }
    let normals = if has_normals {
        let base = HEADER_LEN + count * POINT_LEN;
        let mut normals = Vec::with_capacity(count as usize);
        for i in 0..count {
            let offset = base + i * NORMAL_LEN;
            let trunc = |_| fmt(offset, "truncated normal body".into());
            let x = r.read_f64::<LittleEndian>().map_err(trunc)?;
            let y = r.read_f64::<LittleEndian>().map_err(trunc)?;
            let z = r.read_f64::<LittleEndian>().map_err(trunc)?;
            normals.push(Vector3::new(x, y, z));
        }
        Some(normals)
    } else {
        None
    };
    Scan::new(index, points, normals, t_b, t_e)
}

/// Ascending scan order on even iterations, descending on odd ones, so the
/// buffer tail from one iteration seeds the start of the next.
pub fn iteration_order(iteration: usize, n_scans: usize) -> Vec<usize> {
    if iteration % 2 == 0 {
        (0..n_scans).collect()
    } else {
        (0..n_scans).rev().collect()
    }
}

/// Parameters that shape derived (subsampled + normals) scans; changes
/// invalidate the on-disk cache via the hash in the cache path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    pub subsample_cell: f64,
    pub normal_k: usize,
    pub planarity_max_ratio: f64,
}

impl DerivedParams {
    fn hash_dir(&self) -> String {
        let canon = format!(
            "cell={:.17e};k={};planarity={:.17e}",
            self.subsample_cell, self.normal_k, self.planarity_max_ratio
        );
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in canon.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

enum StoreKind {
    Raw,
    Derived(DerivedParams),
}

struct Resident {
    scan: Arc<Scan>,
    last_use: u64,
}

/// Buffered access counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StoreCounters {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

/// Disk-backed scan access with a fixed-capacity LRU buffer.
///
/// `get` returns immutable snapshots; a handle that is still referenced
/// elsewhere pins its entry, and eviction skips pinned entries.
pub struct ScanStore {
    root: PathBuf,
    manifest: Manifest,
    kind: StoreKind,
    capacity: usize,
    resident: HashMap<usize, Resident>,
    clock: u64,
    counters: StoreCounters,
}

impl ScanStore {
    /// Store serving raw scans as written in the dataset directory.
    pub fn open_raw(root: &Path, capacity: usize) -> Result<Self> {
        let manifest = Manifest::load(root)?;
        Self::with_manifest(root, manifest, capacity, StoreKind::Raw)
    }

    /// Store serving subsampled scans with precomputed normals, cached on
    /// disk under `cache/<param-hash>/`.
    pub fn open_derived(root: &Path, capacity: usize, params: DerivedParams) -> Result<Self> {
        let manifest = Manifest::load(root)?;
        Self::with_manifest(root, manifest, capacity, StoreKind::Derived(params))
    }

    fn with_manifest(
        root: &Path,
        manifest: Manifest,
        capacity: usize,
        kind: StoreKind,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be at least 1".into()));
        }
        Ok(ScanStore {
            root: root.to_path_buf(),
            manifest,
            kind,
            capacity,
            resident: HashMap::new(),
            clock: 0,
            counters: StoreCounters::default(),
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    pub fn counters(&self) -> StoreCounters {
        self.counters
    }

    pub fn resident_count(&self) -> usize {
        self.resident.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn reset_counters(&mut self) {
        self.counters = StoreCounters::default();
    }

    /// Fetches a scan, loading from disk and evicting the least-recently
    /// used resident scan when at capacity.
    pub fn get(&mut self, index: usize) -> Result<Arc<Scan>> {
        if index >= self.manifest.len() {
            return Err(Error::UnknownScan(index));
        }
        self.clock += 1;
        if let Some(entry) = self.resident.get_mut(&index) {
            entry.last_use = self.clock;
            self.counters.hits += 1;
            return Ok(Arc::clone(&entry.scan));
        }
        self.counters.misses += 1;
        if self.resident.len() >= self.capacity {
            self.evict_lru()?;
        }
        let scan = Arc::new(self.load(index)?);
        self.resident.insert(
            index,
            Resident {
                scan: Arc::clone(&scan),
                last_use: self.clock,
            },
        );
        assert!(
            self.resident.len() <= self.capacity,
            "buffer capacity bound violated"
        );
        Ok(scan)
    }

    fn evict_lru(&mut self) -> Result<()> {
        let victim = self
            .resident
            .iter()
            .filter(|(_, r)| Arc::strong_count(&r.scan) == 1)
            .min_by_key(|(idx, r)| (r.last_use, **idx))
            .map(|(idx, _)| *idx);
        match victim {
            Some(idx) => {
                self.resident.remove(&idx);
                self.counters.evictions += 1;
                Ok(())
            }
            None => Err(Error::Manifest(
                "buffer capacity exhausted by pinned scans".into(),
            )),
        }
    }

    fn load(&self, index: usize) -> Result<Scan> {
        let entry = &self.manifest.scans[index];
        let raw_path = self.root.join(&entry.file);
        match &self.kind {
            StoreKind::Raw => read_scan(&raw_path, index),
            StoreKind::Derived(params) => {
                let dir = self.root.join("cache").join(params.hash_dir());
                let cached = dir.join(scan_file_name(index));
                if cached.exists() {
                    return read_scan(&cached, index);
                }
                let raw = read_scan(&raw_path, index)?;
                let sub = grid_subsample(&raw, params.subsample_cell);
                let derived = estimate_normals(
                    &sub,
                    &NormalParams {
                        k: params.normal_k,
                        planarity_max_ratio: params.planarity_max_ratio,
                    },
                );
                fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
                write_scan(&cached, &derived)?;
                Ok(derived)
            }
        }
    }
}

/// Writes knots as `timestamp tx ty tz qx qy qz qw session_id` lines.
pub fn write_pose_file(path: &Path, knots: &[PoseKnot]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let wrap = |e: std::io::Error| io_err(path, e);
    writeln!(w, "# timestamp tx ty tz qx qy qz qw session_id").map_err(wrap)?;
    for knot in knots {
        let t = knot.pose.translation;
        let (qw, qx, qy, qz) = knot.pose.rotation.quaternion_wxyz();
        writeln!(
            w,
            "{:.9} {} {} {} {} {} {} {} {}",
            knot.timestamp, t.x, t.y, t.z, qx, qy, qz, qw, knot.session_id
        )
        .map_err(wrap)?;
    }
    w.flush().map_err(wrap)
}

/// Parses a pose file written by [`write_pose_file`]; `#` starts a comment.
pub fn read_pose_file(path: &Path) -> Result<Vec<PoseKnot>> {
    let data = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut knots = Vec::new();
    for (lineno, line) in data.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = |field: &str, what: &str| -> Result<f64> {
            field.parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                what: format!("bad {what}: {field:?}"),
            })
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                what: format!("expected 9 fields, found {}", fields.len()),
            });
        }
        let timestamp = parse(fields[0], "timestamp")?;
        let tx = parse(fields[1], "tx")?;
        let ty = parse(fields[2], "ty")?;
        let tz = parse(fields[3], "tz")?;
        let qx = parse(fields[4], "qx")?;
        let qy = parse(fields[5], "qy")?;
        let qz = parse(fields[6], "qz")?;
        let qw = parse(fields[7], "qw")?;
        let session_id = fields[8].parse::<u32>().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            what: format!("bad session id: {:?}", fields[8]),
        })?;
        knots.push(PoseKnot {
            pose: crate::geometry::Pose::new(
                Rotation::from_wxyz(qw, qx, qy, qz),
                Vector3::new(tx, ty, tz),
            ),
            timestamp,
            session_id,
        });
    }
    Ok(knots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use tempfile::TempDir;

    fn random_scan(index: usize, n: usize, seed: u64, with_normals: bool) -> Scan {
        let mut rng = StdRng::seed_from_u64(seed);
        let t_b = index as f64 * 0.1;
        let t_e = t_b + 0.1;
        let points: Vec<TimedPoint> = (0..n)
            .map(|_| TimedPoint {
                position: Vector3::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                ),
                timestamp: rng.gen_range(t_b..=t_e),
            })
            .collect();
        let normals = with_normals.then(|| {
            (0..n)
                .map(|i| {
                    if i % 7 == 0 {
                        Vector3::zeros()
                    } else {
                        Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0)
                            .normalize()
                    }
                })
                .collect()
        });
        Scan::new(index, points, normals, t_b, t_e).unwrap()
    }

    fn scan_bits_equal(a: &Scan, b: &Scan) -> bool {
        if a.index != b.index
            || a.t_b.to_bits() != b.t_b.to_bits()
            || a.t_e.to_bits() != b.t_e.to_bits()
            || a.len() != b.len()
        {
            return false;
        }
        let pts = a.points.iter().zip(&b.points).all(|(p, q)| {
            p.position
                .iter()
                .zip(q.position.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits())
                && p.timestamp.to_bits() == q.timestamp.to_bits()
        });
        let normals = match (&a.normals, &b.normals) {
            (None, None) => true,
            (Some(x), Some(y)) => x
                .iter()
                .zip(y)
                .all(|(p, q)| p.iter().zip(q.iter()).all(|(m, n)| m.to_bits() == n.to_bits())),
            _ => false,
        };
        pts && normals
    }

    fn write_dataset(dir: &Path, scans: &[Scan]) {
        let mut manifest = Manifest::default();
        for scan in scans {
            let name = scan_file_name(scan.index);
            write_scan(&dir.join(&name), scan).unwrap();
            manifest.scans.push(ManifestEntry {
                index: scan.index,
                file: name,
                points: scan.len() as u64,
                t_b: scan.t_b,
                t_e: scan.t_e,
                session_id: 0,
            });
        }
        manifest.save(dir).unwrap();
    }

    #[test]
    fn scan_roundtrip_bit_exact() {
        let dir = TempDir::new().unwrap();
        for (i, with_normals) in [(0usize, false), (1, true)] {
            let scan = random_scan(i, 137, 100 + i as u64, with_normals);
            let path = dir.path().join(scan_file_name(i));
            write_scan(&path, &scan).unwrap();
            let back = read_scan(&path, i).unwrap();
            assert!(scan_bits_equal(&scan, &back));
        }
    }

    #[test]
    fn read_rejects_bad_magic() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bad.ctba");
        fs::write(&path, b"NOPE000000000000000000000000000000000000").unwrap();
        match read_scan(&path, 0) {
            Err(Error::ScanFormat { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn read_reports_truncation_with_sizes() {
        let dir = TempDir::new().unwrap();
        let scan = random_scan(0, 10, 7, false);
        let path = dir.path().join(scan_file_name(0));
        write_scan(&path, &scan).unwrap();
        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 8]).unwrap();
        match read_scan(&path, 0) {
            Err(Error::ScanFormat { what, .. }) => {
                assert!(what.contains("expected") && what.contains("bytes"), "{what}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn lru_evicts_least_recently_used() {
        let dir = TempDir::new().unwrap();
        let scans: Vec<Scan> = (0..3).map(|i| random_scan(i, 20, i as u64, false)).collect();
        write_dataset(dir.path(), &scans);
        let mut store = ScanStore::open_raw(dir.path(), 2).unwrap();
        // access 0, 1, 0, 2 -> 1 evicted
        store.get(0).unwrap();
        store.get(1).unwrap();
        store.get(0).unwrap();
        store.get(2).unwrap();
        assert_eq!(store.resident_count(), 2);
        assert_eq!(store.counters().evictions, 1);
        let before = store.counters();
        store.get(0).unwrap();
        assert_eq!(store.counters().hits, before.hits + 1, "0 must still be resident");
        store.get(1).unwrap();
        assert_eq!(store.counters().misses, before.misses + 1, "1 must have been evicted");
    }

    #[test]
    fn resident_hit_does_not_evict() {
        let dir = TempDir::new().unwrap();
        let scans: Vec<Scan> = (0..2).map(|i| random_scan(i, 20, i as u64, false)).collect();
        write_dataset(dir.path(), &scans);
        let mut store = ScanStore::open_raw(dir.path(), 2).unwrap();
        store.get(0).unwrap();
        store.get(1).unwrap();
        let before = store.counters();
        store.get(1).unwrap();
        let after = store.counters();
        assert_eq!(after.hits, before.hits + 1);
        assert_eq!(after.evictions, before.evictions);
    }

    #[test]
    fn get_out_of_range_errors() {
        let dir = TempDir::new().unwrap();
        write_dataset(dir.path(), &[random_scan(0, 5, 1, false)]);
        let mut store = ScanStore::open_raw(dir.path(), 2).unwrap();
        assert!(matches!(store.get(3), Err(Error::UnknownScan(3))));
    }

    #[test]
    fn missing_file_error_names_scan() {
        let dir = TempDir::new().unwrap();
        write_dataset(dir.path(), &[random_scan(0, 5, 1, false)]);
        fs::remove_file(dir.path().join(scan_file_name(0))).unwrap();
        let mut store = ScanStore::open_raw(dir.path(), 2).unwrap();
        match store.get(0) {
            Err(Error::Io { path, .. }) => {
                assert!(path.to_string_lossy().contains("scan_0.ctba"))
            }
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn iteration_order_alternates() {
        assert_eq!(iteration_order(0, 4), vec![0, 1, 2, 3]);
        assert_eq!(iteration_order(1, 4), vec![3, 2, 1, 0]);
        assert_eq!(iteration_order(2, 4), vec![0, 1, 2, 3]);
    }

    #[test]
    fn reversal_reduces_misses_on_sequential_route() {
        let dir = TempDir::new().unwrap();
        let scans: Vec<Scan> = (0..30).map(|i| random_scan(i, 5, i as u64, false)).collect();
        write_dataset(dir.path(), &scans);

        let run = |reversed: bool| -> u64 {
            let mut store = ScanStore::open_raw(dir.path(), 10).unwrap();
            for iter in 0..4 {
                let order = if reversed {
                    iteration_order(iter, 30)
                } else {
                    (0..30).collect()
                };
                for idx in order {
                    store.get(idx).unwrap();
                    assert!(store.resident_count() <= store.capacity());
                }
            }
            store.counters().misses
        };
        let misses_reversed = run(true);
        let misses_ascending = run(false);
        assert!(
            misses_reversed <= misses_ascending,
            "reversal should not increase misses: {misses_reversed} vs {misses_ascending}"
        );
        assert!(misses_reversed < misses_ascending);
    }

    #[test]
    fn derived_store_caches_on_disk() {
        let dir = TempDir::new().unwrap();
        let scans: Vec<Scan> = (0..2).map(|i| random_scan(i, 300, i as u64, false)).collect();
        write_dataset(dir.path(), &scans);
        let params = DerivedParams {
            subsample_cell: 0.5,
            normal_k: 10,
            planarity_max_ratio: 1.0,
        };
        let mut store = ScanStore::open_derived(dir.path(), 10, params).unwrap();
        let first = store.get(0).unwrap();
        assert!(first.normals.is_some());
        assert!(first.len() <= 300);
        let cache_dir = dir.path().join("cache").join(params.hash_dir());
        assert!(cache_dir.join(scan_file_name(0)).exists());

        // Second store re-reads the cached file bit-identically.
        let mut store2 = ScanStore::open_derived(dir.path(), 10, params).unwrap();
        let again = store2.get(0).unwrap();
        assert!(scan_bits_equal(&first, &again));

        // Different parameters use a different cache directory.
        let params2 = DerivedParams {
            subsample_cell: 0.25,
            ..params
        };
        assert_ne!(params.hash_dir(), params2.hash_dir());
    }

    #[test]
    fn pose_file_roundtrip() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("poses.txt");
        let mut rng = StdRng::seed_from_u64(21);
        let knots: Vec<PoseKnot> = (0..10)
            .map(|i| PoseKnot {
                pose: Pose::new(
                    Rotation::from_axis_angle(
                        Vector3::new(
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(-1.0..1.0),
                        ),
                        rng.gen_range(0.0..3.0),
                    ),
                    Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                ),
                timestamp: i as f64 * 0.1,
                session_id: (i / 5) as u32,
            })
            .collect();
        write_pose_file(&path, &knots).unwrap();
        let back = read_pose_file(&path).unwrap();
        assert_eq!(back.len(), knots.len());
        for (a, b) in knots.iter().zip(&back) {
            assert!((a.timestamp - b.timestamp).abs() < 1e-9);
            assert_eq!(a.session_id, b.session_id);
            assert!((a.pose.translation - b.pose.translation).norm() < 1e-12);
            assert!(a.pose.rotation.angle_to(&b.pose.rotation) < 1e-12);
        }
    }

    #[test]
    fn pose_file_parse_error_reports_line() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("poses.txt");
        fs::write(&path, "# header\n0.0 0 0 0 0 0 0 1 0\nnot a pose line\n").unwrap();
        match read_pose_file(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn buffer_is_transparent_under_random_access(
            seed in 0u64..500,
            capacity in 1usize..6,
        ) {
            let dir = TempDir::new().unwrap();
            let scans: Vec<Scan> = (0..8).map(|i| random_scan(i, 30, i as u64, i % 2 == 0)).collect();
            write_dataset(dir.path(), &scans);
            let mut rng = StdRng::seed_from_u64(seed);
            let mut store = ScanStore::open_raw(dir.path(), capacity).unwrap();
            for _ in 0..60 {
                let idx = rng.gen_range(0..8);
                let got = store.get(idx).unwrap();
                let direct = read_scan(&dir.path().join(scan_file_name(idx)), idx).unwrap();
                prop_assert!(scan_bits_equal(&got, &direct));
                prop_assert!(store.resident_count() <= capacity);
            }
        }
    }
}
