//! Distant-supervision miners and the auxiliary label mappings.
//!
//! Matching is exact over case-folded token subsequences; no stemming.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{parse_bio, Bio, Example, Group, TaggedExample};
use crate::{Error, Result};

/// Set of lowercase token sequences.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: Vec<Vec<String>>,
    index: HashSet<Vec<String>>,
    max_len: usize,
}

impl Lexicon {
    /// Builds a lexicon from entries; tokens are case-folded and duplicate
    /// sequences dropped. Empty entries are rejected.
    pub fn new<I, E, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = E>,
        E: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut lex = Lexicon::default();
        for entry in entries {
            let seq: Vec<String> = entry.into_iter().map(|t| t.as_ref().to_lowercase()).collect();
            if seq.is_empty() {
                return Err(Error::Config("lexicon entry with no tokens".into()));
            }
            if lex.index.insert(seq.clone()) {
                lex.max_len = lex.max_len.max(seq.len());
                lex.entries.push(seq);
            }
        }
        lex.entries.sort();
        Ok(lex)
    }

    /// Single-token entries.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        Self::new(words.iter().map(|w| [w.as_ref()]))
    }

    /// One entry per line, tokens separated by spaces. Lines starting with
    /// `#` and blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| l.split(' ').filter(|t| !t.is_empty()).collect::<Vec<_>>()),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|e| e.join(" ") + "\n").collect()
    }

    pub fn entries(&self) -> &[Vec<String>] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn contains_token(&self, token: &str) -> bool {
        self.index.contains(&vec![token.to_lowercase()])
    }

    /// Length of the longest entry matching `folded[start..]`, if any.
    fn longest_match_at(&self, folded: &[String], start: usize) -> Option<usize> {
        let avail = folded.len() - start;
        (1..=self.max_len.min(avail))
            .rev()
            .find(|&len| self.index.contains(&folded[start..start + len]))
    }

    /// Leftmost non-overlapping matches as half-open ranges; at each start
    /// the longest entry wins.
    pub fn find_matches<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<(usize, usize)> {
        let folded = fold(tokens);
        let mut out = Vec::new();
        let mut i = 0;
        while i < folded.len() {
            match self.longest_match_at(&folded, i) {
                Some(len) => {
                    out.push((i, i + len));
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }

    /// Marks every token covered by some entry occurrence (overlapping
    /// occurrences included).
    pub fn coverage<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<bool> {
        let folded = fold(tokens);
        let mut covered = vec![false; folded.len()];
        for start in 0..folded.len() {
            for len in 1..=self.max_len.min(folded.len() - start) {
                if self.index.contains(&folded[start..start + len]) {
                    covered[start..start + len].iter_mut().for_each(|c| *c = true);
                }
            }
        }
        covered
    }
}

fn fold<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens.iter().map(|t| t.as_ref().to_lowercase()).collect()
}

fn require_lexicon(lex: &Lexicon) -> Result<()> {
    if lex.is_empty() {
        return Err(Error::Config("empty lexicon".into()));
    }
    Ok(())
}

fn regroup(examples: &[Example], is_hard: impl Fn(&Example) -> bool) -> Vec<Example> {
    examples
        .iter()
        .map(|ex| {
            let group = if ex.label == 1 {
                Group::Pos
            } else if is_hard(ex) {
                Group::HardNeg
            } else {
                Group::EasyNeg
            };
            Example {
                group: Some(group),
                ..ex.clone()
            }
        })
        .collect()
}

/// Negatives containing any lexicon entry become hard negatives.
pub fn mine_lexicon(examples: &[Example], lexicon: &Lexicon) -> Result<Vec<Example>> {
    require_lexicon(lexicon)?;
    Ok(regroup(examples, |ex| !lexicon.find_matches(&ex.tokens).is_empty()))
}

/// Negatives with at least `min_mentions` keyword matches become hard
/// negatives. Matches are leftmost and non-overlapping.
pub fn mine_keyword_count(examples: &[Example], keywords: &Lexicon, min_mentions: usize) -> Result<Vec<Example>> {
    require_lexicon(keywords)?;
    if min_mentions == 0 {
        return Err(Error::Config("min_mentions must be >= 1".into()));
    }
    Ok(regroup(examples, |ex| {
        keywords.find_matches(&ex.tokens).len() >= min_mentions
    }))
}

/// Sorted, non-overlapping half-open token ranges flagged as hard negatives.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanList {
    spans: Vec<(usize, usize)>,
}

impl SpanList {
    pub fn new(spans: Vec<(usize, usize)>, len: usize) -> Result<Self> {
        for (i, &(s, e)) in spans.iter().enumerate() {
            if s >= e || e > len {
                return Err(Error::Label(format!("span ({s},{e}) out of bounds for length {len}")));
            }
            if i > 0 && spans[i - 1].1 > s {
                return Err(Error::Label("spans must be sorted and non-overlapping".into()));
            }
        }
        Ok(SpanList { spans })
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

/// Maximal runs of gold-`O` tokens that lie inside a keyword occurrence.
pub fn mine_token_level(ex: &TaggedExample, keywords: &Lexicon) -> Result<SpanList> {
    ex.validate().map_err(Error::Label)?;
    let covered = keywords.coverage(&ex.tokens);
    let mut spans = Vec::new();
    let mut start = None;
    for (i, tag) in ex.tags.iter().enumerate() {
        let hard = covered[i] && tag == "O";
        match (hard, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, ex.tags.len()));
    }
    SpanList::new(spans, ex.tokens.len())
}

/// Target, auxiliary and three-way labels of one classification instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelTriple {
    pub y: u8,
    pub z: u8,
    pub l: u8,
}

impl LabelTriple {
    pub const POS: LabelTriple = LabelTriple { y: 1, z: 1, l: 1 };
    pub const HARD_NEG: LabelTriple = LabelTriple { y: 0, z: 1, l: 2 };
    pub const EASY_NEG: LabelTriple = LabelTriple { y: 0, z: 0, l: 0 };

    pub fn of(group: Group) -> Self {
        match group {
            Group::Pos => Self::POS,
            Group::HardNeg => Self::HARD_NEG,
            Group::EasyNeg => Self::EASY_NEG,
        }
    }

    pub fn group(self) -> Group {
        match self {
            Self::POS => Group::Pos,
            Self::HARD_NEG => Group::HardNeg,
            _ => Group::EasyNeg,
        }
    }
}

pub fn map_classification(group: Option<Group>) -> Result<LabelTriple> {
    group
        .map(LabelTriple::of)
        .ok_or_else(|| Error::Label("example has no mined group".into()))
}

/// Auxiliary tag: position inside any positive or hard-negative span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ZTag {
    O,
    B,
    I,
}

/// Three-way tag: separate begin/inside labels for positive and
/// hard-negative spans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LTag {
    O,
    BPos,
    IPos,
    BHard,
    IHard,
}

impl ZTag {
    pub const ALL: [ZTag; 3] = [ZTag::O, ZTag::B, ZTag::I];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ZTag::O => "O",
            ZTag::B => "B",
            ZTag::I => "I",
        }
    }
}

impl LTag {
    pub const ALL: [LTag; 5] = [LTag::O, LTag::BPos, LTag::IPos, LTag::BHard, LTag::IHard];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LTag::O => "O",
            LTag::BPos => "B-pos",
            LTag::IPos => "I-pos",
            LTag::BHard => "B-hard",
            LTag::IHard => "I-hard",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagTriple {
    pub y: Vec<String>,
    pub z: Vec<ZTag>,
    pub l: Vec<LTag>,
}

pub fn map_tagging(ex: &TaggedExample, hard: &SpanList) -> Result<TagTriple> {
    ex.validate().map_err(Error::Label)?;
    let n = ex.tags.len();
    let mut z = Vec::with_capacity(n);
    let mut l = Vec::with_capacity(n);
    for tag in &ex.tags {
        match parse_bio(tag).map_err(Error::Label)? {
            Bio::Outside => {
                z.push(ZTag::O);
                l.push(LTag::O);
            }
            Bio::Begin(_) => {
                z.push(ZTag::B);
                l.push(LTag::BPos);
            }
            Bio::Inside(_) => {
                z.push(ZTag::I);
                l.push(LTag::IPos);
            }
        }
    }
    for &(s, e) in hard.spans() {
        if e > n {
            return Err(Error::Label(format!("hard span ({s},{e}) exceeds length {n}")));
        }
        for i in s..e {
            if ex.tags[i] != "O" {
                return Err(Error::Label(format!(
                    "hard span ({s},{e}) overlaps gold tag {:?} at {i}",
                    ex.tags[i]
                )));
            }
            let first = i == s;
            z[i] = if first { ZTag::B } else { ZTag::I };
            l[i] = if first { LTag::BHard } else { LTag::IHard };
        }
    }
    Ok(TagTriple {
        y: ex.tags.clone(),
        z,
        l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(text: &str, label: u8) -> Example {
        Example::from_text("x", text, label).unwrap()
    }

    fn tagged(tokens: &str, tags: &str) -> TaggedExample {
        TaggedExample {
            id: "t".into(),
            tokens: tokens.split(' ').map(String::from).collect(),
            tags: tags.split(' ').map(String::from).collect(),
        }
    }

    #[test]
    fn lexicon_file_format() {
        let lex = Lexicon::parse("# positive words\ngreat\n\nNice\nnot bad\ngreat\n").unwrap();
        assert_eq!(lex.len(), 3);
        assert!(lex.contains_token("nice"));
        assert_eq!(lex.to_text(), "great\nnice\nnot bad\n");
        assert!(Lexicon::parse("# only comments\n").unwrap().is_empty());
    }

    #[test]
    fn staff_examples() {
        let lex = Lexicon::from_words(&["great"]).unwrap();
        let data = vec![
            ex("the staff are great", 1),
            ex("the location is great but the staff are surly and unhelpful", 0),
            ex("the staff are surly and unhelpful", 0),
            ex("the staff were fine", 1),
        ];
        let mined = mine_lexicon(&data, &lex).unwrap();
        let groups: Vec<Group> = mined.iter().map(|e| e.group.unwrap()).collect();
        assert_eq!(groups, vec![Group::Pos, Group::HardNeg, Group::EasyNeg, Group::Pos]);
        assert_eq!(mine_lexicon(&mined, &lex).unwrap(), mined);
    }

    #[test]
    fn matching_is_case_folded_and_multi_token() {
        let lex = Lexicon::parse("very good\ngood").unwrap();
        assert_eq!(lex.find_matches(&["It", "was", "VERY", "Good"]), vec![(2, 4)]);
        assert_eq!(lex.find_matches(&["good", "good"]), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn empty_lexicon_is_config_error() {
        let lex = Lexicon::default();
        assert!(matches!(mine_lexicon(&[ex("a", 0)], &lex), Err(Error::Config(_))));
        assert!(matches!(
            mine_keyword_count(&[ex("a", 0)], &lex, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn keyword_count_thresholds() {
        let kw = Lexicon::from_words(&["profit", "revenue"]).unwrap();
        let one = ex("the profit of the company increased during the reporting period", 0);
        let none = ex("the company held its annual meeting", 0);
        let two = ex("revenue grew while profit fell", 0);
        let got = mine_keyword_count(&[one.clone(), none, two.clone()], &kw, 1).unwrap();
        let groups: Vec<Group> = got.iter().map(|e| e.group.unwrap()).collect();
        assert_eq!(groups, vec![Group::HardNeg, Group::EasyNeg, Group::HardNeg]);
        let got = mine_keyword_count(&[one, two], &kw, 2).unwrap();
        assert_eq!(got[0].group, Some(Group::EasyNeg));
        assert_eq!(got[1].group, Some(Group::HardNeg));
        assert!(mine_keyword_count(&got, &kw, 0).is_err());
    }

    #[test]
    fn token_level_spans() {
        let kw = Lexicon::from_words(&["profit", "revenue"]).unwrap();
        let t = tagged("the profit rose", "O O O");
        assert_eq!(mine_token_level(&t, &kw).unwrap().spans(), &[(1, 2)]);

        let t = tagged("the profit of retail rose", "O B-FSI O B-B&S O");
        assert!(mine_token_level(&t, &kw).unwrap().is_empty());

        let t = tagged("revenue profit were discussed", "O O O O");
        assert_eq!(mine_token_level(&t, &kw).unwrap().spans(), &[(0, 2)]);
    }

    #[test]
    fn multi_token_keyword_partially_on_gold() {
        let kw = Lexicon::parse("net profit").unwrap();
        let t = tagged("net profit rose", "O B-FSI O");
        assert_eq!(mine_token_level(&t, &kw).unwrap().spans(), &[(0, 1)]);
    }

    #[test]
    fn classification_table() {
        let rows: Vec<(u8, u8, u8)> = [Group::Pos, Group::HardNeg, Group::EasyNeg]
            .into_iter()
            .map(|g| {
                let t = map_classification(Some(g)).unwrap();
                (t.y, t.z, t.l)
            })
            .collect();
        assert_eq!(rows, vec![(1, 1, 1), (0, 1, 2), (0, 0, 0)]);
        assert!(map_classification(None).is_err());
        for g in Group::ALL {
            assert_eq!(LabelTriple::of(g).group(), g);
        }
    }

    #[test]
    fn tagging_table() {
        let t = tagged(
            "the profit of retail business and revenue cost rose",
            "O B-FSI O B-B&S I-B&S O O O O",
        );
        let hard = SpanList::new(vec![(6, 8)], 9).unwrap();
        let m = map_tagging(&t, &hard).unwrap();
        assert_eq!(m.y, t.tags);
        use LTag::*;
        assert_eq!(
            m.z,
            vec![
                ZTag::O,
                ZTag::B,
                ZTag::O,
                ZTag::B,
                ZTag::I,
                ZTag::O,
                ZTag::B,
                ZTag::I,
                ZTag::O
            ]
        );
        assert_eq!(m.l, vec![O, BPos, O, BPos, IPos, O, BHard, IHard, O]);
    }

    #[test]
    fn hard_span_over_gold_is_rejected() {
        let t = tagged("the profit rose", "O B-FSI O");
        let hard = SpanList::new(vec![(1, 2)], 3).unwrap();
        assert!(map_tagging(&t, &hard).is_err());
    }

    #[test]
    fn span_list_invariants() {
        assert!(SpanList::new(vec![(0, 2), (1, 3)], 4).is_err());
        assert!(SpanList::new(vec![(2, 2)], 4).is_err());
        assert!(SpanList::new(vec![(0, 5)], 4).is_err());
        assert!(SpanList::new(vec![(0, 1), (1, 2)], 4).is_ok());
    }
}
