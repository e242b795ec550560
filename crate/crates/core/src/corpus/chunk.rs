/// Coarse token class used by the rule-based chunker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkTag {
    Noun,
    Verb,
    Other,
}

/// Proposes candidate spans over a token list.
///
/// Implementations must return sorted, non-overlapping, in-bounds
/// `(start, end)` spans with `start < end`.
pub trait CandidateExtractor {
    fn extract(&self, tokens: &[String]) -> Vec<(usize, usize)>;
}

/// Emits every maximal run of consecutive tokens sharing a noun or verb tag.
pub struct TagRunChunker<F> {
    tagger: F,
}

impl<F: Fn(&str) -> ChunkTag> TagRunChunker<F> {
    pub fn new(tagger: F) -> Self {
        Self { tagger }
    }
}

impl<F: Fn(&str) -> ChunkTag> CandidateExtractor for TagRunChunker<F> {
    fn extract(&self, tokens: &[String]) -> Vec<(usize, usize)> {
        let tags: Vec<ChunkTag> = tokens.iter().map(|t| (self.tagger)(t)).collect();
        let mut spans = Vec::new();
        let mut i = 0;
        while i < tags.len() {
            if tags[i] == ChunkTag::Other {
                i += 1;
                continue;
            }
            let start = i;
            while i < tags.len() && tags[i] == tags[start] {
                i += 1;
            }
            spans.push((start, i));
        }
        spans
    }
}

/// Runs `extractor` on `tokens`.
pub fn extract_candidates(tokens: &[String], extractor: &dyn CandidateExtractor) -> Vec<(usize, usize)> {
    extractor.extract(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn tagger(t: &str) -> ChunkTag {
        match t.chars().next() {
            Some('N') => ChunkTag::Noun,
            Some('V') => ChunkTag::Verb,
            _ => ChunkTag::Other,
        }
    }

    /// Every span whose tokens share one non-filler tag and which cannot be
    /// extended on either side.
    fn brute_force(tokens: &[String]) -> Vec<(usize, usize)> {
        let tags: Vec<ChunkTag> = tokens.iter().map(|t| tagger(t)).collect();
        let n = tags.len();
        let mut out = Vec::new();
        for s in 0..n {
            for e in s + 1..=n {
                let t = tags[s];
                if t == ChunkTag::Other || !tags[s..e].iter().all(|&x| x == t) {
                    continue;
                }
                let left_open = s == 0 || tags[s - 1] != t;
                let right_open = e == n || tags[e] != t;
                if left_open && right_open {
                    out.push((s, e));
                }
            }
        }
        out
    }

    #[test]
    fn all_filler_yields_nothing() {
        let c = TagRunChunker::new(tagger);
        assert!(extract_candidates(&toks("a b c"), &c).is_empty());
    }

    #[test]
    fn single_noun_run() {
        let c = TagRunChunker::new(tagger);
        assert_eq!(extract_candidates(&toks("a b c Nx Ny d"), &c), vec![(3, 5)]);
    }

    #[test]
    fn two_runs_match_exhaustive_scan() {
        let c = TagRunChunker::new(tagger);
        let t = toks("the Nboss a Vyelled Vloudly at Nme Nagain");
        let spans = extract_candidates(&t, &c);
        assert_eq!(spans, brute_force(&t));
        assert_eq!(spans, vec![(1, 2), (3, 5), (6, 8)]);
        let t = toks("Na Nb x Vc");
        assert_eq!(extract_candidates(&t, &c), brute_force(&t));
        assert_eq!(extract_candidates(&t, &c).len(), 2);
    }

    #[test]
    fn adjacent_noun_and_verb_runs_split() {
        let c = TagRunChunker::new(tagger);
        let t = toks("Na Vb");
        assert_eq!(extract_candidates(&t, &c), vec![(0, 1), (1, 2)]);
    }
}
