use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::snippet::{id_set, CodeSnippet, MembershipLabel};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Whitebox,
    Graybox,
    Blackbox,
}

impl Setting {
    /// Share of the member corpus the adversary is assumed to hold.
    pub fn default_known_fraction(self) -> f64 {
        match self {
            Setting::Whitebox => 0.70,
            Setting::Graybox => 0.05,
            Setting::Blackbox => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Whitebox => "whitebox",
            Setting::Graybox => "graybox",
            Setting::Blackbox => "blackbox",
        }
    }
}

/// Per-class sample counts for the three sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub test: usize,
    pub validation: usize,
}

impl SplitSizes {
    /// Full-size protocol: 30,000 train, 10,000 test and 500 validation snippets per class.
    pub const FULL: SplitSizes = SplitSizes { train: 30_000, test: 10_000, validation: 500 };

    /// The full-size counts divided by `scale`, each at least one.
    pub fn scaled(scale: usize) -> Result<SplitSizes> {
        if scale == 0 {
            return Err(Error::Config("scale must be positive".into()));
        }
        let f = |n: usize| (n / scale).max(1);
        Ok(SplitSizes { train: f(Self::FULL.train), test: f(Self::FULL.test), validation: f(Self::FULL.validation) })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSnippet {
    pub snippet: CodeSnippet,
    pub label: MembershipLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub setting: Setting,
    pub known_fraction: f64,
    pub sizes: SplitSizes,
    pub train: Vec<LabeledSnippet>,
    pub validation: Vec<LabeledSnippet>,
    pub test: Vec<LabeledSnippet>,
    /// Ids of the member snippets the adversary is assumed to know.
    pub known_member_ids: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetName {
    Train,
    Validation,
    Test,
}

#[derive(Serialize, Deserialize)]
struct ManifestRow<'a> {
    id: &'a str,
    set: SetName,
    label: MembershipLabel,
}

impl SplitBundle {
    pub fn sets(&self) -> [(SetName, &[LabeledSnippet]); 3] {
        [(SetName::Train, &self.train), (SetName::Validation, &self.validation), (SetName::Test, &self.test)]
    }

    /// Members of the known pool, in pool order.
    pub fn known_members<'a>(&self, members: &'a [CodeSnippet]) -> Vec<&'a CodeSnippet> {
        let known: HashSet<&str> = self.known_member_ids.iter().map(String::as_str).collect();
        members.iter().filter(|m| known.contains(m.id.as_str())).collect()
    }

    /// Checks every structural invariant; returns the first violation.
    pub fn audit(&self) -> Result<()> {
        let mut seen: HashSet<&str> = HashSet::new();
        for (name, set) in self.sets() {
            for item in set {
                if !seen.insert(item.snippet.id.as_str()) {
                    return Err(Error::Contamination(format!("id {} appears twice ({name:?})", item.snippet.id)));
                }
            }
        }
        let known: HashSet<&str> = self.known_member_ids.iter().map(String::as_str).collect();
        for (name, set) in self.sets() {
            for item in set.iter().filter(|i| i.label.is_member()) {
                let in_known = known.contains(item.snippet.id.as_str());
                if (name == SetName::Test) == in_known {
                    return Err(Error::Contamination(format!(
                        "member {} in {name:?} violates the known/unknown pool separation",
                        item.snippet.id
                    )));
                }
            }
        }
        if self.setting == Setting::Blackbox {
            if !self.train.is_empty() {
                return Err(Error::Contamination("black-box bundle has training data".into()));
            }
            if self.validation.iter().any(|i| i.label.is_member()) {
                return Err(Error::Contamination("black-box validation holds members".into()));
            }
        }
        for (name, set) in [(SetName::Train, &self.train), (SetName::Test, &self.test)] {
            let m = set.iter().filter(|i| i.label.is_member()).count();
            if m * 2 != set.len() {
                return Err(Error::Contamination(format!("{name:?} is unbalanced: {m} members of {}", set.len())));
            }
        }
        Ok(())
    }

    /// One `{"id","set","label"}` JSON object per line.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (set, items) in self.sets() {
            for item in items {
                serde_json::to_writer(&mut f, &ManifestRow { id: &item.snippet.id, set, label: item.label })?;
                f.write_all(b"\n")?;
            }
        }
        f.flush()?;
        Ok(())
    }
}

/// Size of the known-member pool, `⌊fraction · n⌋`.
pub fn known_pool_size(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Builds balanced train/validation/test mixes.
///
/// Members are shuffled and the first `⌊known_fraction · |members|⌋` form the
/// known pool; train and validation members come only from it, test members
/// only from the remainder. Output depends only on the id-sorted inputs and
/// `seed`.
pub fn build_splits(
    members: &[CodeSnippet],
    nonmembers: &[CodeSnippet],
    setting: Setting,
    known_fraction: Option<f64>,
    sizes: SplitSizes,
    seed: u64,
) -> Result<SplitBundle> {
    let known_fraction = known_fraction.unwrap_or_else(|| setting.default_known_fraction());
    if !(0.0..=1.0).contains(&known_fraction) {
        return Err(Error::Config(format!("known_fraction {known_fraction} outside [0, 1]")));
    }
    if setting == Setting::Blackbox && known_fraction != 0.0 {
        return Err(Error::Config("black-box setting has no known members".into()));
    }
    let member_ids = id_set(members);
    let overlap: Vec<&str> = nonmembers.iter().map(|s| s.id.as_str()).filter(|id| member_ids.contains(id)).collect();
    if !overlap.is_empty() {
        return Err(Error::Contamination(format!("ids in both corpora: {}", overlap.join(", "))));
    }
    if let Some(s) = members.iter().find(|s| s.role != MembershipLabel::Member) {
        return Err(Error::Contamination(format!("snippet {} in the member list is not a member", s.id)));
    }
    if let Some(s) = nonmembers.iter().find(|s| s.role != MembershipLabel::Nonmember) {
        return Err(Error::Contamination(format!("snippet {} in the nonmember list is a member", s.id)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members: Vec<&CodeSnippet> = members.iter().collect();
    members.sort_by(|a, b| a.id.cmp(&b.id));
    members.shuffle(&mut rng);
    let mut nonmembers: Vec<&CodeSnippet> = nonmembers.iter().collect();
    nonmembers.sort_by(|a, b| a.id.cmp(&b.id));
    nonmembers.shuffle(&mut rng);

    let pool = known_pool_size(known_fraction, members.len());
    let (known, unknown) = members.split_at(pool);

    let (train_n, val_m) = match setting {
        Setting::Blackbox => (0, 0),
        _ => (sizes.train, sizes.validation),
    };
    let need = |what: &str, required: usize, available: usize| {
        if required > available {
            Err(Error::Size { what: what.into(), required, available })
        } else {
            Ok(())
        }
    };
    need("known members", train_n + val_m, known.len())?;
    need("unknown members", sizes.test, unknown.len())?;
    let nonmember_need = train_n + sizes.test + sizes.validation;
    need("nonmembers", nonmember_need, nonmembers.len())?;

    let label = |s: &&CodeSnippet, l| LabeledSnippet { snippet: (*s).clone(), label: l };
    let mut nm = nonmembers.iter();
    let mut take_nm = |n: usize| -> Vec<LabeledSnippet> {
        nm.by_ref().take(n).map(|s| label(s, MembershipLabel::Nonmember)).collect()
    };

    let mut train: Vec<LabeledSnippet> = known[..train_n].iter().map(|s| label(s, MembershipLabel::Member)).collect();
    train.extend(take_nm(train_n));
    let mut test: Vec<LabeledSnippet> =
        unknown[..sizes.test].iter().map(|s| label(s, MembershipLabel::Member)).collect();
    test.extend(take_nm(sizes.test));
    let mut validation: Vec<LabeledSnippet> =
        known[train_n..train_n + val_m].iter().map(|s| label(s, MembershipLabel::Member)).collect();
    validation.extend(take_nm(sizes.validation));

    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    validation.shuffle(&mut rng);

    let bundle = SplitBundle {
        setting,
        known_fraction,
        sizes,
        train,
        validation,
        test,
        known_member_ids: known.iter().map(|s| s.id.clone()).collect(),
    };
    bundle.audit()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::snippet::Language;

    fn corpus(prefix: &str, n: usize, role: MembershipLabel) -> Vec<CodeSnippet> {
        (0..n)
            .map(|i| {
                CodeSnippet::new(format!("{prefix}{i:05}"), format!("x = {i}"), None, Language::Python, prefix, role)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn graybox_bundle_draws_train_members_from_known_pool() {
        let m = corpus("m", 1000, MembershipLabel::Member);
        let n = corpus("n", 1000, MembershipLabel::Nonmember);
        let sizes = SplitSizes { train: 40, test: 20, validation: 10 };
        let b = build_splits(&m, &n, Setting::Graybox, None, sizes, 3).unwrap();
        assert_eq!((b.train.len(), b.test.len(), b.validation.len()), (80, 40, 20));
        assert_eq!(b.known_member_ids.len(), 50);
        // independent audit: every train/validation member is in the 50-id pool
        let pool: HashSet<&String> = b.known_member_ids.iter().collect();
        for item in b.train.iter().chain(&b.validation).filter(|i| i.label.is_member()) {
            assert!(pool.contains(&item.snippet.id));
        }
        for item in b.test.iter().filter(|i| i.label.is_member()) {
            assert!(!pool.contains(&item.snippet.id));
        }
    }

    #[test]
    fn blackbox_has_no_training_data() {
        let m = corpus("m", 100, MembershipLabel::Member);
        let n = corpus("n", 100, MembershipLabel::Nonmember);
        let sizes = SplitSizes { train: 40, test: 20, validation: 10 };
        let b = build_splits(&m, &n, Setting::Blackbox, None, sizes, 1).unwrap();
        assert!(b.train.is_empty());
        assert_eq!(b.validation.len(), 10);
        assert!(b.validation.iter().all(|i| !i.label.is_member()));
        assert_eq!(b.test.len(), 40);
    }

    #[test]
    fn same_seed_same_bundle_regardless_of_input_order() {
        let m = corpus("m", 300, MembershipLabel::Member);
        let n = corpus("n", 300, MembershipLabel::Nonmember);
        let sizes = SplitSizes { train: 30, test: 30, validation: 5 };
        let a = build_splits(&m, &n, Setting::Whitebox, None, sizes, 9).unwrap();
        let mut rev = m.clone();
        rev.reverse();
        let b = build_splits(&rev, &n, Setting::Whitebox, None, sizes, 9).unwrap();
        assert_eq!(a, b);
        let c = build_splits(&m, &n, Setting::Whitebox, None, sizes, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn insufficient_data_reports_required_and_available() {
        let m = corpus("m", 100, MembershipLabel::Member);
        let n = corpus("n", 100, MembershipLabel::Nonmember);
        let sizes = SplitSizes { train: 40, test: 20, validation: 10 };
        match build_splits(&m, &n, Setting::Graybox, None, sizes, 1) {
            Err(Error::Size { required, available, .. }) => assert_eq!((required, available), (50, 5)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shared_ids_are_contamination() {
        let m = corpus("x", 10, MembershipLabel::Member);
        let n = corpus("x", 10, MembershipLabel::Nonmember);
        let sizes = SplitSizes { train: 1, test: 1, validation: 1 };
        assert!(matches!(build_splits(&m, &n, Setting::Whitebox, None, sizes, 1), Err(Error::Contamination(_))));
    }

    #[test]
    fn scaled_sizes_divide_full_counts() {
        assert_eq!(SplitSizes::scaled(100).unwrap(), SplitSizes { train: 300, test: 100, validation: 5 });
        assert_eq!(SplitSizes::scaled(1000).unwrap().validation, 1);
        assert!(SplitSizes::scaled(0).is_err());
    }

    #[test]
    fn manifest_lists_every_snippet() {
        let m = corpus("m", 200, MembershipLabel::Member);
        let n = corpus("n", 200, MembershipLabel::Nonmember);
        let sizes = SplitSizes { train: 20, test: 20, validation: 5 };
        let b = build_splits(&m, &n, Setting::Whitebox, None, sizes, 2).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        b.write_manifest(f.path()).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert_eq!(text.lines().count(), 40 + 40 + 10);
        assert!(text.lines().next().unwrap().contains("\"set\":\"train\""));
    }
}
