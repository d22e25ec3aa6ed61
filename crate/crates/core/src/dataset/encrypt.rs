use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{CryptoRng, RngCore};

use super::{CellValue, DatasetError, NumericRange, PlainDataset, Schema, VariableKind};
use crate::crypto::{hash, hash_concat, random_salt, Digest, DIGEST_LEN};
use crate::mife::{self, GroupElement, KeyVector};

pub const EDS_MAGIC: &[u8; 5] = b"PSFE1";
pub const LISTS_MAGIC: &[u8; 6] = b"PSFEL1";

const TAG_HASHED: u8 = 0x01;
const TAG_NUMERIC: u8 = 0x02;

/// `(x + k) ‖ H(k)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NumericCell {
    pub masked: GroupElement,
    pub key_index: Digest,
}

impl NumericCell {
    pub const ENCODED_LEN: usize = 8 + DIGEST_LEN;

    pub fn to_bytes(&self) -> [u8; Self::ENCODED_LEN] {
        let mut out = [0u8; Self::ENCODED_LEN];
        out[..8].copy_from_slice(&self.masked.to_le_bytes());
        out[8..].copy_from_slice(&self.key_index.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != Self::ENCODED_LEN {
            return None;
        }
        Some(Self {
            masked: GroupElement::from_le_bytes(bytes[..8].try_into().ok()?),
            key_index: Digest::from_slice(&bytes[8..])?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncryptedCell {
    Hashed(Digest),
    Numeric(NumericCell),
}

/// What the storage provider holds: salted header digests and a grid of
/// salted digests and masked numbers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedDataset {
    header: Vec<Digest>,
    rows: Vec<Vec<EncryptedCell>>,
}

impl EncryptedDataset {
    pub fn header(&self) -> &[Digest] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<EncryptedCell>] {
        &self.rows
    }

    pub fn numeric_cells(&self) -> impl Iterator<Item = &NumericCell> {
        self.rows.iter().flatten().filter_map(|c| match c {
            EncryptedCell::Numeric(n) => Some(n),
            EncryptedCell::Hashed(_) => None,
        })
    }

    /// Numeric cells of the column whose salted header is in `variables`,
    /// for every row containing a hashed cell whose digest is in `values`,
    /// in row order.
    pub fn search(&self, values: &BTreeSet<Digest>, variables: &BTreeSet<Digest>) -> Vec<NumericCell> {
        let Some(col) = self.header.iter().position(|h| variables.contains(h)) else {
            return Vec::new();
        };
        self.rows
            .iter()
            .filter(|row| row.iter().any(|c| matches!(c, EncryptedCell::Hashed(d) if values.contains(d))))
            .filter_map(|row| match row[col] {
                EncryptedCell::Numeric(cell) => Some(cell),
                EncryptedCell::Hashed(_) => None,
            })
            .collect()
    }

    /// `"PSFE1" ‖ arity(u32 LE) ‖ header digests ‖ row-major cells`, each
    /// cell a tag byte followed by its fixed-length fields.
    pub fn to_bytes(&self) -> Vec<u8> {
        let cells: usize = self.rows.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(9 + self.header.len() * DIGEST_LEN + cells * (1 + NumericCell::ENCODED_LEN));
        out.extend_from_slice(EDS_MAGIC);
        out.extend_from_slice(&(self.header.len() as u32).to_le_bytes());
        for h in &self.header {
            out.extend_from_slice(&h.0);
        }
        for cell in self.rows.iter().flatten() {
            match cell {
                EncryptedCell::Hashed(d) => {
                    out.push(TAG_HASHED);
                    out.extend_from_slice(&d.0);
                }
                EncryptedCell::Numeric(n) => {
                    out.push(TAG_NUMERIC);
                    out.extend_from_slice(&n.to_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        let malformed = DatasetError::Malformed("encrypted dataset");
        let rest = bytes.strip_prefix(EDS_MAGIC.as_slice()).ok_or(malformed.clone())?;
        let (arity, mut rest) = rest.split_first_chunk::<4>().ok_or(malformed.clone())?;
        let arity = u32::from_le_bytes(*arity) as usize;
        if arity == 0 || rest.len() < arity * DIGEST_LEN {
            return Err(malformed);
        }
        let header = rest[..arity * DIGEST_LEN]
            .chunks_exact(DIGEST_LEN)
            .map(|c| Digest::from_slice(c).expect("chunk length"))
            .collect();
        rest = &rest[arity * DIGEST_LEN..];
        let mut rows = Vec::new();
        let mut row = Vec::with_capacity(arity);
        let mut seen = HashSet::new();
        while let Some((&tag, tail)) = rest.split_first() {
            let (cell, len) = match tag {
                TAG_HASHED if tail.len() >= DIGEST_LEN => {
                    (EncryptedCell::Hashed(Digest::from_slice(&tail[..DIGEST_LEN]).expect("length")), DIGEST_LEN)
                }
                TAG_NUMERIC if tail.len() >= NumericCell::ENCODED_LEN => {
                    let cell = NumericCell::from_bytes(&tail[..NumericCell::ENCODED_LEN]).expect("length");
                    if !seen.insert(cell.key_index) {
                        return Err(malformed);
                    }
                    (EncryptedCell::Numeric(cell), NumericCell::ENCODED_LEN)
                }
                _ => return Err(malformed),
            };
            row.push(cell);
            if row.len() == arity {
                rows.push(std::mem::replace(&mut row, Vec::with_capacity(arity)));
            }
            rest = &tail[len..];
        }
        if !row.is_empty() {
            return Err(malformed);
        }
        Ok(Self { header, rows })
    }
}

/// Unsalted digest → every salted digest recorded for it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SaltMap(BTreeMap<Digest, BTreeSet<Digest>>);

impl SaltMap {
    pub fn insert(&mut self, unsalted: Digest, salted: Digest) {
        self.0.entry(unsalted).or_default().insert(salted);
    }

    pub fn lookup(&self, unsalted: &Digest) -> BTreeSet<Digest> {
        self.0.get(unsalted).cloned().unwrap_or_default()
    }

    /// Total number of salted digests across all entries.
    pub fn salted_count(&self) -> usize {
        self.0.values().map(BTreeSet::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Digest, &BTreeSet<Digest>)> {
        self.0.iter()
    }
}

/// Key index `H(k)` → key `k`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyMap(BTreeMap<Digest, GroupElement>);

impl KeyMap {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: &Digest) -> Option<GroupElement> {
        self.0.get(index).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Digest, &GroupElement)> {
        self.0.iter()
    }
}

/// Unsalted variable-name digest → declared range, for numerical variables.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RangeTable(BTreeMap<Digest, NumericRange>);

impl RangeTable {
    pub fn from_schema(schema: &Schema) -> Self {
        Self(
            schema
                .variables()
                .iter()
                .filter_map(|v| match v.kind {
                    VariableKind::Numerical(range) => Some((hash(v.name.as_bytes()), range)),
                    _ => None,
                })
                .collect(),
        )
    }

    pub fn get(&self, variable: &Digest) -> Option<NumericRange> {
        self.0.get(variable).copied()
    }
}

pub fn lookup_salted(map: &SaltMap, unsalted: &Digest) -> BTreeSet<Digest> {
    map.lookup(unsalted)
}

/// Keys for `indices`, in order. An unknown index means the list was
/// tampered with or refers to another dataset.
pub fn keys_for_indices(map: &KeyMap, indices: &[Digest]) -> Result<Vec<GroupElement>, DatasetError> {
    indices
        .iter()
        .map(|i| map.get(i).ok_or(DatasetError::UnknownKeyIndex(*i)))
        .collect()
}

/// Everything the master authority stores.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaLists {
    pub salts: SaltMap,
    pub keys: KeyMap,
    pub ranges: RangeTable,
}

impl MaLists {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(LISTS_MAGIC);
        out.extend_from_slice(&(self.salts.0.len() as u32).to_le_bytes());
        for (unsalted, salted) in &self.salts.0 {
            out.extend_from_slice(&unsalted.0);
            out.extend_from_slice(&(salted.len() as u32).to_le_bytes());
            for s in salted {
                out.extend_from_slice(&s.0);
            }
        }
        out.extend_from_slice(&(self.keys.0.len() as u32).to_le_bytes());
        for (index, key) in &self.keys.0 {
            out.extend_from_slice(&index.0);
            out.extend_from_slice(&key.to_le_bytes());
        }
        out.extend_from_slice(&(self.ranges.0.len() as u32).to_le_bytes());
        for (var, range) in &self.ranges.0 {
            out.extend_from_slice(&var.0);
            out.extend_from_slice(&range.lo.to_le_bytes());
            out.extend_from_slice(&range.hi.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        let mut r = Reader(bytes.strip_prefix(LISTS_MAGIC.as_slice()).ok_or(DatasetError::Malformed("lists"))?);
        let mut lists = MaLists::default();
        for _ in 0..r.u32()? {
            let unsalted = r.digest()?;
            let n = r.u32()?;
            if n == 0 {
                return Err(DatasetError::Malformed("lists"));
            }
            for _ in 0..n {
                lists.salts.insert(unsalted, r.digest()?);
            }
        }
        for _ in 0..r.u32()? {
            let index = r.digest()?;
            let key = GroupElement::from_le_bytes(r.take::<8>()?);
            lists.keys.0.insert(index, key);
        }
        for _ in 0..r.u32()? {
            let var = r.digest()?;
            let lo = i64::from_le_bytes(r.take::<8>()?);
            let hi = i64::from_le_bytes(r.take::<8>()?);
            let range = NumericRange::new(lo, hi).ok_or(DatasetError::Malformed("lists"))?;
            lists.ranges.0.insert(var, range);
        }
        if !r.0.is_empty() {
            return Err(DatasetError::Malformed("lists"));
        }
        // canonical form: re-encoding must reproduce the input
        if lists.to_bytes() != bytes {
            return Err(DatasetError::Malformed("lists"));
        }
        Ok(lists)
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], DatasetError> {
        let (head, tail) = self.0.split_first_chunk::<N>().ok_or(DatasetError::Malformed("lists"))?;
        self.0 = tail;
        Ok(*head)
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn digest(&mut self) -> Result<Digest, DatasetError> {
        self.take::<DIGEST_LEN>().map(Digest)
    }
}

#[derive(Clone, Debug)]
pub struct EncryptionOutput {
    pub dataset: EncryptedDataset,
    pub salts: SaltMap,
    pub keys: KeyMap,
}

impl EncryptionOutput {
    /// The lists handed to the master authority, including the range table.
    pub fn ma_lists(&self, schema: &Schema) -> MaLists {
        MaLists { salts: self.salts.clone(), keys: self.keys.clone(), ranges: RangeTable::from_schema(schema) }
    }
}

fn salted_digest<R: RngCore + CryptoRng + ?Sized>(value: &str, salts: &mut SaltMap, rng: &mut R) -> Digest {
    let salt = random_salt(rng);
    let salted = hash_concat(&[value.as_bytes(), &salt]);
    salts.insert(hash(value.as_bytes()), salted);
    salted
}

/// Hashes every categorical/ordinal cell and header name with a fresh salt
/// and masks every numerical cell with a fresh key, recording the unsalted →
/// salted digests and the key index → key pairs.
pub fn encrypt_dataset<R: RngCore + CryptoRng + ?Sized>(
    ds: &PlainDataset,
    rng: &mut R,
) -> Result<EncryptionOutput, DatasetError> {
    let schema = ds.schema();
    let numeric_count = ds
        .rows()
        .iter()
        .flatten()
        .filter(|c| matches!(c, CellValue::Number(_)))
        .count();

    let mut salts = SaltMap::default();
    let header = schema
        .variables()
        .iter()
        .map(|v| salted_digest(&v.name, &mut salts, rng))
        .collect();

    let mut key_map = KeyMap::default();
    let keys = if numeric_count == 0 {
        None
    } else {
        // One slot per cell; redraw on the (negligible) chance of a repeated key index.
        loop {
            let keys = mife::setup(numeric_count, rng).expect("nonzero slot count");
            key_map.0 = keys.as_slice().iter().map(|k| (hash(&k.to_le_bytes()), *k)).collect();
            if key_map.0.len() == numeric_count {
                break Some(keys);
            }
        }
    };

    let mut slot = 0usize;
    let mut rows = Vec::with_capacity(ds.rows().len());
    for row in ds.rows() {
        let mut out = Vec::with_capacity(row.len());
        for (cell, var) in row.iter().zip(schema.variables()) {
            out.push(match (cell, &var.kind) {
                (CellValue::Text(value), kind) if kind.is_hashed() => EncryptedCell::Hashed(salted_digest(value, &mut salts, rng)),
                (CellValue::Number(x), VariableKind::Numerical(range)) if range.contains(*x) => {
                    let keys: &KeyVector = keys.as_ref().expect("numeric cells imply keys");
                    let ct = mife::encrypt(keys, slot, GroupElement::from_signed(*x)).expect("slot within key vector");
                    let key_index = hash(&keys.get(slot).expect("slot within key vector").to_le_bytes());
                    slot += 1;
                    EncryptedCell::Numeric(NumericCell { masked: ct.body, key_index })
                }
                (CellValue::Number(x), VariableKind::Numerical(range)) => {
                    return Err(DatasetError::OutOfRange {
                        row: rows.len(),
                        name: var.name.clone(),
                        value: *x,
                        lo: range.lo,
                        hi: range.hi,
                    })
                }
                _ => {
                    return Err(DatasetError::KindMismatch {
                        row: rows.len(),
                        name: var.name.clone(),
                        expected: if var.kind.is_hashed() { "text" } else { "numeric" },
                    })
                }
            });
        }
        rows.push(out);
    }

    Ok(EncryptionOutput { dataset: EncryptedDataset { header, rows }, salts, keys: key_map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::table1;
    use crate::dataset::Variable;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn encrypted_table(seed: u64) -> EncryptionOutput {
        encrypt_dataset(&table1(), &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn table_cell_counts() {
        let out = encrypted_table(1);
        let cells: Vec<_> = out.dataset.rows().iter().flatten().collect();
        let hashed = cells.iter().filter(|c| matches!(c, EncryptedCell::Hashed(_))).count();
        assert_eq!(hashed, 8);
        assert_eq!(cells.len() - hashed, 12);
        assert_eq!(out.keys.len(), 12);
        // coverage: one salted digest per hashed cell plus one per column
        assert_eq!(out.salts.salted_count(), 8 + 5);
    }

    #[test]
    fn minimal_dataset() {
        let schema = Schema::new(vec![Variable::categorical("Diagnosis")]).unwrap();
        let ds = PlainDataset::new(schema, vec![vec!["flu".into()]]).unwrap();
        let out = encrypt_dataset(&ds, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        assert_eq!(out.dataset.rows().len(), 1);
        assert!(matches!(out.dataset.rows()[0][0], EncryptedCell::Hashed(_)));
        assert_eq!(lookup_salted(&out.salts, &hash(b"flu")).len(), 1);
        assert_eq!(lookup_salted(&out.salts, &hash(b"Diagnosis")).len(), 1);
        assert!(out.keys.is_empty());
    }

    #[test]
    fn repeated_values_get_distinct_salts() {
        let out = encrypted_table(3);
        let flu = lookup_salted(&out.salts, &hash(b"flu"));
        assert_eq!(flu.len(), 2);
        let mild = lookup_salted(&out.salts, &hash(b"mild"));
        assert_eq!(mild.len(), 2);
        assert!(flu.is_disjoint(&mild));
        assert_eq!(lookup_salted(&out.salts, &hash(b"Age")).len(), 1);
        assert!(lookup_salted(&out.salts, &hash(b"malaria")).is_empty());

        let rows = out.dataset.rows();
        let digest = |r: usize, c: usize| match rows[r][c] {
            EncryptedCell::Hashed(d) => d,
            EncryptedCell::Numeric(_) => panic!("expected hashed cell"),
        };
        assert_eq!(flu, BTreeSet::from([digest(1, 0), digest(2, 0)]));
        assert_eq!(mild, BTreeSet::from([digest(0, 1), digest(2, 1)]));
    }

    #[test]
    fn numeric_cells_round_trip_through_key_map() {
        let ds = table1();
        let out = encrypted_table(4);
        for (plain_row, enc_row) in ds.rows().iter().zip(out.dataset.rows()) {
            for (plain, enc) in plain_row.iter().zip(enc_row) {
                if let (CellValue::Number(x), EncryptedCell::Numeric(cell)) = (plain, enc) {
                    let key = out.keys.get(&cell.key_index).unwrap();
                    assert_eq!((cell.masked - key).centered(), *x);
                    assert_eq!(cell.key_index, hash(&key.to_le_bytes()));
                }
            }
        }
        let unique: HashSet<_> = out.dataset.numeric_cells().map(|c| c.key_index).collect();
        assert_eq!(unique.len(), 12);
    }

    #[test]
    fn keys_for_flu_age_indices() {
        let out = encrypted_table(5);
        let values = lookup_salted(&out.salts, &hash(b"flu"));
        let variables = lookup_salted(&out.salts, &hash(b"Age"));
        let hits = out.dataset.search(&values, &variables);
        assert_eq!(hits.len(), 2);
        let indices: Vec<_> = hits.iter().map(|c| c.key_index).collect();
        let keys = keys_for_indices(&out.keys, &indices).unwrap();
        let plain: Vec<i64> = hits.iter().zip(&keys).map(|(c, k)| (c.masked - *k).centered()).collect();
        assert_eq!(plain, vec![58, 41]);

        assert_eq!(keys_for_indices(&out.keys, &[]).unwrap(), vec![]);
        let fake = hash(b"fabricated");
        assert_eq!(keys_for_indices(&out.keys, &[fake]), Err(DatasetError::UnknownKeyIndex(fake)));
    }

    #[test]
    fn search_examples() {
        let out = encrypted_table(6);
        let find = |v: &str, var: &str| {
            out.dataset.search(&lookup_salted(&out.salts, &hash(v.as_bytes())), &lookup_salted(&out.salts, &hash(var.as_bytes())))
        };
        assert_eq!(find("mild", "sbp").len(), 2);
        assert_eq!(find("malaria", "sbp").len(), 0);
        assert_eq!(find("flu", "Condition").len(), 0);
        assert_eq!(find("flu", "Nope").len(), 0);
    }

    #[test]
    fn deterministic_under_fixed_entropy() {
        assert_eq!(encrypted_table(7).dataset.to_bytes(), encrypted_table(7).dataset.to_bytes());
        assert_ne!(encrypted_table(7).dataset.to_bytes(), encrypted_table(8).dataset.to_bytes());
    }

    #[test]
    fn eds_bytes_layout_and_round_trip() {
        let out = encrypted_table(9);
        let bytes = out.dataset.to_bytes();
        assert_eq!(&bytes[..5], b"PSFE1");
        assert_eq!(&bytes[5..9], &5u32.to_le_bytes());
        assert_eq!(bytes.len(), 9 + 5 * 32 + 8 * 33 + 12 * 41);
        assert_eq!(EncryptedDataset::from_bytes(&bytes).unwrap(), out.dataset);
        assert!(EncryptedDataset::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad_tag = bytes.clone();
        bad_tag[9 + 5 * 32] = 0x07;
        assert!(EncryptedDataset::from_bytes(&bad_tag).is_err());
    }

    #[test]
    fn lists_round_trip() {
        let ds = table1();
        let out = encrypt_dataset(&ds, &mut ChaCha20Rng::seed_from_u64(10)).unwrap();
        let lists = out.ma_lists(ds.schema());
        let bytes = lists.to_bytes();
        assert_eq!(MaLists::from_bytes(&bytes).unwrap(), lists);
        assert_eq!(lists.ranges.get(&hash(b"dbp")), NumericRange::new(0, 120));
        assert_eq!(lists.ranges.get(&hash(b"Diagnosis")), None);
        assert!(MaLists::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn rejects_out_of_range_values() {
        // bypass PlainDataset validation to exercise the encoder's own check
        let schema = Schema::new(vec![Variable::numerical("Age", 0, 120)]).unwrap();
        let ds = PlainDataset { schema, rows: vec![vec![CellValue::Number(500)]] };
        assert!(matches!(
            encrypt_dataset(&ds, &mut ChaCha20Rng::seed_from_u64(11)),
            Err(DatasetError::OutOfRange { value: 500, .. })
        ));
    }
}
