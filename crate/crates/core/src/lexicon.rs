//! Loading, validating and pruning the two opposed lexicons.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusStats, Vocabulary, WordId};
use crate::error::{Error, Result};
use crate::moments::cross_counts;

/// Which lexicon (and label) a word belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Zero,
    One,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Zero, Side::One];

    pub fn other(self) -> Side {
        match self {
            Side::Zero => Side::One,
            Side::One => Side::Zero,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Zero => 0,
            Side::One => 1,
        }
    }

    pub fn label(self) -> u8 {
        self.index() as u8
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lexicon {}", self.index())
    }
}

/// Non-comment, non-blank lines of a lexicon file, trimmed.
pub fn read_lexicon_words(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedLexicon {
    pub ids: BTreeSet<WordId>,
    /// Entries with no match in the vocabulary, in file order.
    pub oov: Vec<String>,
}

/// Maps words to vocabulary ids. An exact match wins; otherwise the
/// lowercased form is tried, so lexicons match a lowercasing tokenizer.
pub fn lexicon_ids<S: AsRef<str>>(words: &[S], vocab: &Vocabulary) -> LoadedLexicon {
    let mut ids = BTreeSet::new();
    let mut oov = Vec::new();
    for w in words {
        let w = w.as_ref();
        match vocab.id(w).or_else(|| vocab.id(&w.to_lowercase())) {
            Some(id) => {
                ids.insert(id);
            }
            None if !oov.iter().any(|o| o == w) => oov.push(w.to_owned()),
            None => {}
        }
    }
    LoadedLexicon { ids, oov }
}

pub fn load_lexicon(path: &Path, vocab: &Vocabulary) -> Result<LoadedLexicon> {
    let loaded = lexicon_ids(&read_lexicon_words(path)?, vocab);
    if loaded.ids.is_empty() {
        return Err(Error::EmptyLexicon {
            name: path.display().to_string(),
            reason: format!("no entry found in the vocabulary ({} out-of-vocabulary)", loaded.oov.len()),
        });
    }
    Ok(loaded)
}

/// Two disjoint, non-empty word sets. Word lists are sorted by id; positions
/// in these lists index the per-word parameter vectors elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconPair {
    words: [Vec<WordId>; 2],
    names: [String; 2],
    index: HashMap<WordId, (Side, usize)>,
    /// Lexicons as they were before pruning, used as the pruning reference.
    origin: Option<[Vec<WordId>; 2]>,
}

impl LexiconPair {
    fn build(words: [Vec<WordId>; 2], names: [String; 2], origin: Option<[Vec<WordId>; 2]>) -> Result<Self> {
        for side in Side::BOTH {
            if words[side.index()].is_empty() {
                return Err(Error::EmptyLexicon {
                    name: names[side.index()].clone(),
                    reason: format!("{side} has no words left"),
                });
            }
        }
        let mut index = HashMap::new();
        for side in Side::BOTH {
            for (pos, &id) in words[side.index()].iter().enumerate() {
                index.insert(id, (side, pos));
            }
        }
        Ok(Self {
            words,
            names,
            index,
            origin,
        })
    }

    pub fn words(&self, side: Side) -> &[WordId] {
        &self.words[side.index()]
    }

    pub fn name(&self, side: Side) -> &str {
        &self.names[side.index()]
    }

    pub fn len(&self, side: Side) -> usize {
        self.words[side.index()].len()
    }

    /// Side and position of a lexicon word.
    pub fn lookup(&self, id: WordId) -> Option<(Side, usize)> {
        self.index.get(&id).copied()
    }

    pub fn contains(&self, id: WordId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn origin(&self) -> [&[WordId]; 2] {
        match &self.origin {
            Some(o) => [&o[0], &o[1]],
            None => [&self.words[0], &self.words[1]],
        }
    }

    /// Keeps the words for which `keep` holds, remembering the current lists as origin.
    pub fn retain(&self, mut keep: impl FnMut(Side, WordId) -> bool) -> Result<(LexiconPair, [Vec<WordId>; 2])> {
        let mut kept: [Vec<WordId>; 2] = [Vec::new(), Vec::new()];
        let mut removed: [Vec<WordId>; 2] = [Vec::new(), Vec::new()];
        for side in Side::BOTH {
            for &id in self.words(side) {
                if keep(side, id) {
                    kept[side.index()].push(id);
                } else {
                    removed[side.index()].push(id);
                }
            }
        }
        let origin = self.origin.clone().unwrap_or_else(|| self.words.clone());
        let pair = Self::build(kept, self.names.clone(), Some(origin))?;
        Ok((pair, removed))
    }
}

/// Makes the pair disjoint. Returns the pair and the words that were in both
/// inputs (removed from both sides).
pub fn validate_pair<A, B>(lex0: A, lex1: B, names: [&str; 2]) -> Result<(LexiconPair, Vec<WordId>)>
where
    A: IntoIterator<Item = WordId>,
    B: IntoIterator<Item = WordId>,
{
    let l0: BTreeSet<WordId> = lex0.into_iter().collect();
    let l1: BTreeSet<WordId> = lex1.into_iter().collect();
    let overlap: Vec<WordId> = l0.intersection(&l1).copied().collect();
    let words = [
        l0.difference(&l1).copied().collect(),
        l1.difference(&l0).copied().collect(),
    ];
    let pair = LexiconPair::build(words, names.map(str::to_owned), None)?;
    Ok((pair, overlap))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedWord {
    pub id: WordId,
    pub cross_count: u128,
    /// Cross count expected with no predictiveness at all.
    pub chance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    /// Words that co-occur with the opposite lexicon above chance, per side.
    pub above_chance: [Vec<PrunedWord>; 2],
    /// Lexicon words that never occur in the corpus.
    pub unseen: [Vec<WordId>; 2],
}

impl PruneReport {
    pub fn removed(&self) -> usize {
        self.above_chance.iter().map(Vec::len).sum::<usize>() + self.unseen.iter().map(Vec::len).sum::<usize>()
    }
}

/// Removes lexicon words whose cross-lexicon count exceeds its chance
/// expectation `s * mu_i * sum_{j in opposite} mu_j`, along with words that
/// never occur. Counts are always taken against the pair's origin lexicons,
/// so pruning an already-pruned pair removes nothing more.
pub fn prune_lexicons(
    corpus: &Corpus,
    pair: &LexiconPair,
    stats: &CorpusStats,
    mu: &[f64],
) -> Result<(LexiconPair, PruneReport)> {
    let origin = pair.origin();
    let counts = cross_counts(corpus, origin[0], origin[1]);
    let s = stats.pair_weight as f64;
    let mu_of = |id: WordId| mu.get(id as usize).copied().unwrap_or(0.0);
    let coverage = origin.map(|ws| ws.iter().map(|&id| mu_of(id)).sum::<f64>());
    let position: [HashMap<WordId, usize>; 2] =
        origin.map(|ws| ws.iter().enumerate().map(|(p, &id)| (id, p)).collect());

    let mut report = PruneReport::default();
    let result = pair.retain(|side, id| {
        let m = mu_of(id);
        if m <= 0.0 {
            report.unseen[side.index()].push(id);
            return false;
        }
        let c = counts[side.index()][position[side.index()][&id]];
        let chance = s * m * coverage[side.other().index()];
        if c as f64 > chance {
            report.above_chance[side.index()].push(PrunedWord {
                id,
                cross_count: c,
                chance,
            });
            false
        } else {
            true
        }
    });
    match result {
        Ok((pruned, _)) => Ok((pruned, report)),
        Err(Error::EmptyLexicon { name, reason }) => Err(Error::EmptyLexicon {
            name,
            reason: format!(
                "{reason} after pruning ({} above chance, {} unseen)",
                report.above_chance.iter().map(Vec::len).sum::<usize>(),
                report.unseen.iter().map(Vec::len).sum::<usize>()
            ),
        }),
        Err(e) => Err(e),
    }
}

/// Drops lexicon words with zero baseline probability.
pub fn drop_unseen(pair: &LexiconPair, mu: &[f64]) -> Result<(LexiconPair, [Vec<WordId>; 2])> {
    pair.retain(|_, id| mu.get(id as usize).is_some_and(|&m| m > 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_stats, estimate_baseline, CountVector};
    use crate::moments::cross_label_counts;
    use proptest::prelude::*;

    const NAMES: [&str; 2] = ["negative", "positive"];

    #[test]
    fn load_examples() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocabulary::from_words(["good", "great", "bad"]).unwrap();

        let p = dir.path().join("a.txt");
        fs::write(&p, "# positive words\ngood\ngreat\n").unwrap();
        let l = load_lexicon(&p, &vocab).unwrap();
        assert_eq!(l.ids.len(), 2);
        assert!(l.oov.is_empty());

        fs::write(&p, "good\nzzzz\n").unwrap();
        let l = load_lexicon(&p, &vocab).unwrap();
        assert_eq!(l.ids.into_iter().collect::<Vec<_>>(), vec![0]);
        assert_eq!(l.oov, vec!["zzzz".to_string()]);

        fs::write(&p, "good\ngood\n  good  \nGood\n").unwrap();
        assert_eq!(load_lexicon(&p, &vocab).unwrap().ids.len(), 1);

        fs::write(&p, "zzzz\n").unwrap();
        assert!(matches!(load_lexicon(&p, &vocab), Err(Error::EmptyLexicon { .. })));

        assert!(matches!(load_lexicon(&dir.path().join("missing"), &vocab), Err(Error::Io { .. })));
    }

    #[test]
    fn validate_examples() {
        let (pair, overlap) = validate_pair([0, 1], [2], NAMES).unwrap();
        assert_eq!(pair.words(Side::Zero), &[0, 1]);
        assert_eq!(pair.words(Side::One), &[2]);
        assert!(overlap.is_empty());

        let (pair, overlap) = validate_pair([0, 1], [1, 2], NAMES).unwrap();
        assert_eq!(pair.words(Side::Zero), &[0]);
        assert_eq!(pair.words(Side::One), &[2]);
        assert_eq!(overlap, vec![1]);
        assert_eq!(pair.lookup(2), Some((Side::One, 0)));
        assert_eq!(pair.lookup(1), None);

        assert!(matches!(validate_pair([0], [0], NAMES), Err(Error::EmptyLexicon { .. })));
    }

    /// One document of N=10 tokens: a (L0) once, b (L1) `opp` times, filler z.
    /// L0 also holds d, which is absent from this document but carries a
    /// large baseline so that b stays below its own chance level.
    fn hand_case(opp: u64) -> (Corpus, LexiconPair) {
        let vocab = Vocabulary::from_words(["a", "b", "d", "z"]).unwrap();
        let doc = CountVector::from_pairs([(0, 1), (1, opp), (3, 9 - opp)]);
        let corpus = Corpus::from_docs(vocab, vec![doc], None).unwrap();
        let (pair, _) = validate_pair([0, 2], [1], NAMES).unwrap();
        (corpus, pair)
    }

    #[test]
    fn prune_above_chance_hand_arithmetic() {
        // s = 10 * 9 = 90; chance for a = 90 * 0.1 * 0.2 = 1.8.
        let mu = [0.1, 0.2, 0.5, 0.2];
        let (corpus, pair) = hand_case(5);
        let stats = corpus_stats(&corpus);
        assert_eq!(stats.pair_weight, 90);
        let (pruned, report) = prune_lexicons(&corpus, &pair, &stats, &mu).unwrap();
        assert_eq!(pruned.words(Side::Zero), &[2]);
        assert_eq!(pruned.words(Side::One), &[1]);
        assert_eq!(report.above_chance[0].len(), 1);
        assert_eq!(report.above_chance[0][0].cross_count, 5);
        assert!((report.above_chance[0][0].chance - 1.8).abs() < 1e-12);

        let (corpus, pair) = hand_case(1);
        let (pruned, report) = prune_lexicons(&corpus, &pair, &corpus_stats(&corpus), &mu).unwrap();
        assert_eq!(pruned.words(Side::Zero), &[0, 2]);
        assert_eq!(report.removed(), 0);
    }

    #[test]
    fn prune_that_empties_a_lexicon_is_an_error() {
        let vocab = Vocabulary::from_words(["a", "b"]).unwrap();
        let doc = CountVector::from_pairs([(0, 5), (1, 5)]);
        let corpus = Corpus::from_docs(vocab, vec![doc], None).unwrap();
        let (pair, _) = validate_pair([0], [1], NAMES).unwrap();
        let mu = estimate_baseline(&corpus).unwrap();
        let err = prune_lexicons(&corpus, &pair, &corpus_stats(&corpus), &mu).unwrap_err();
        assert!(matches!(err, Error::EmptyLexicon { .. }), "{err}");
    }

    #[test]
    fn prune_reports_the_removed_word() {
        // L0 = {a, c}; a co-occurs heavily with b, c never does. The long
        // second document raises s so that b alone stays below chance:
        // s = 90 + 9900, chance(a) = 9990 * (5/110)^2 = 20.6 < 25,
        // chance(b) = 9990 * (5/110) * (8/110) = 33.0 > 25.
        let vocab = Vocabulary::from_words(["a", "b", "c", "z"]).unwrap();
        let docs = vec![
            CountVector::from_pairs([(0, 5), (1, 5)]),
            CountVector::from_pairs([(2, 3), (3, 97)]),
        ];
        let corpus = Corpus::from_docs(vocab, docs, None).unwrap();
        let (pair, _) = validate_pair([0, 2], [1], NAMES).unwrap();
        let stats = corpus_stats(&corpus);
        let mu = estimate_baseline(&corpus).unwrap();
        let (pruned, report) = prune_lexicons(&corpus, &pair, &stats, &mu).unwrap();
        assert_eq!(pruned.words(Side::Zero), &[2]);
        assert_eq!(report.above_chance[0].len(), 1);
        assert_eq!(report.above_chance[0][0].id, 0);
        assert_eq!(report.above_chance[0][0].cross_count, 25);
        // word c has c_i = 0 and positive mu, so it survives
        assert!(pruned.contains(2));
    }

    #[test]
    fn unseen_words_are_dropped_and_reported() {
        let vocab = Vocabulary::from_words(["a", "b", "c"]).unwrap();
        let docs = vec![CountVector::from_pairs([(0, 2), (1, 1)])];
        let corpus = Corpus::from_docs(vocab, docs, None).unwrap();
        let (pair, _) = validate_pair([0, 2], [1], NAMES).unwrap();
        let mu = estimate_baseline(&corpus).unwrap();
        let (pruned, removed) = drop_unseen(&pair, &mu).unwrap();
        assert_eq!(pruned.words(Side::Zero), &[0]);
        assert_eq!(removed[0], vec![2]);
    }

    fn arb_corpus() -> impl Strategy<Value = Corpus> {
        prop::collection::vec(prop::collection::vec((0u32..12, 1u64..6), 1..10), 2..25).prop_map(|docs| {
            let vocab = Vocabulary::from_words((0..12).map(|i| format!("w{i}"))).unwrap();
            let docs = docs.into_iter().map(CountVector::from_pairs).collect();
            Corpus::from_docs(vocab, docs, None).unwrap()
        })
    }

    proptest! {
        #[test]
        fn pruning_is_idempotent_and_leaves_nonpositive_residuals(corpus in arb_corpus()) {
            let (pair, _) = validate_pair([0, 1, 2, 3], [4, 5, 6, 7], NAMES).unwrap();
            let stats = corpus_stats(&corpus);
            let mu = estimate_baseline(&corpus).unwrap();
            let Ok((once, _)) = prune_lexicons(&corpus, &pair, &stats, &mu) else { return Ok(()); };
            let (twice, report) = prune_lexicons(&corpus, &once, &stats, &mu).unwrap();
            prop_assert_eq!(&twice.words, &once.words);
            prop_assert_eq!(report.removed(), 0);

            // residuals against the original lexicons are <= 0 for survivors
            let origin = pair.origin();
            let counts = cross_label_counts(&corpus, &pair);
            let s = stats.pair_weight as f64;
            for side in Side::BOTH {
                let cov: f64 = origin[side.other().index()].iter().map(|&j| mu[j as usize]).sum();
                for (p, &id) in pair.words(side).iter().enumerate() {
                    if once.contains(id) {
                        let r = counts[side.index()][p] as f64 - s * mu[id as usize] * cov;
                        prop_assert!(r <= 0.0);
                    }
                }
            }
        }
    }
}
