//! Genome encoding of per-layer attention configurations.
//!
//! Every slot picks either `Identity` or one of `kinds × widths × groups`.
//! Canonical integer code per slot: `0` is Identity, then the attention
//! choices in lexicographic `(kind, width, group)` order starting at `1`.

use std::fmt;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionKind {
    #[serde(rename = "SE")]
    Se,
    #[serde(rename = "GSoP")]
    Gsop,
    #[serde(rename = "CBAM")]
    Cbam,
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::Se => "SE",
            AttentionKind::Gsop => "GSoP",
            AttentionKind::Cbam => "CBAM",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceParams {
    pub kinds: Vec<AttentionKind>,
    /// Internal (bottleneck) widths of the attention transforms.
    pub widths: Vec<usize>,
    pub groups: Vec<usize>,
    pub num_slots: usize,
}

impl Default for SpaceParams {
    fn default() -> Self {
        SpaceParams::desk(4)
    }
}

impl SpaceParams {
    pub fn new(
        kinds: Vec<AttentionKind>,
        widths: Vec<usize>,
        groups: Vec<usize>,
        num_slots: usize,
    ) -> Result<Self> {
        let s = SpaceParams {
            kinds,
            widths,
            groups,
            num_slots,
        };
        s.check()?;
        Ok(s)
    }

    /// Desk-scale widths `{8, 16, 32, 64}`.
    pub fn desk(num_slots: usize) -> Self {
        SpaceParams {
            kinds: vec![AttentionKind::Se, AttentionKind::Gsop, AttentionKind::Cbam],
            widths: vec![8, 16, 32, 64],
            groups: vec![1, 2, 4, 8],
            num_slots,
        }
    }

    /// Widths `{256, 512, 1024, 2048}` as used with a ResNet-50 backbone.
    pub fn full_scale(num_slots: usize) -> Self {
        SpaceParams {
            widths: vec![256, 512, 1024, 2048],
            ..SpaceParams::desk(num_slots)
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpace(m.to_string()));
        if self.kinds.is_empty() || self.widths.is_empty() || self.groups.is_empty() {
            return bad("kinds, widths and groups must be non-empty");
        }
        for (i, k) in self.kinds.iter().enumerate() {
            if self.kinds[..i].contains(k) {
                return bad("duplicate attention kind");
            }
        }
        if !self.widths.windows(2).all(|w| w[0] < w[1]) || self.widths[0] == 0 {
            return bad("widths must be positive and strictly increasing");
        }
        if !self.groups.windows(2).all(|w| w[0] < w[1]) || self.groups[0] == 0 {
            return bad("groups must be positive and strictly increasing");
        }
        if self.num_slots == 0 {
            return bad("num_slots must be at least 1");
        }
        Ok(())
    }

    /// Per-slot choice count, `|kinds|·|widths|·|groups| + 1`.
    pub fn choices_per_slot(&self) -> u32 {
        (self.kinds.len() * self.widths.len() * self.groups.len() + 1) as u32
    }

    /// Exact size of the search space.
    pub fn cardinality(&self) -> BigUint {
        BigUint::from(self.choices_per_slot()).pow(self.num_slots as u32)
    }

    pub fn gene_code(&self, gene: &SlotGene) -> u32 {
        match *gene {
            SlotGene::Identity => 0,
            SlotGene::Attention {
                kind,
                width_idx,
                group_idx,
            } => {
                let k = self
                    .kinds
                    .iter()
                    .position(|&x| x == kind)
                    .expect("gene kind not in space");
                1 + ((k * self.widths.len() + width_idx) * self.groups.len() + group_idx) as u32
            }
        }
    }

    pub fn gene_from_code(&self, code: u32) -> Option<SlotGene> {
        if code >= self.choices_per_slot() {
            return None;
        }
        if code == 0 {
            return Some(SlotGene::Identity);
        }
        let c = (code - 1) as usize;
        let group_idx = c % self.groups.len();
        let width_idx = (c / self.groups.len()) % self.widths.len();
        let kind = self.kinds[c / (self.groups.len() * self.widths.len())];
        Some(SlotGene::Attention {
            kind,
            width_idx,
            group_idx,
        })
    }

    /// Uniform draw over the per-slot choices.
    pub fn sample_gene<R: Rng + ?Sized>(&self, rng: &mut R) -> SlotGene {
        let code = rng.random_range(0..self.choices_per_slot());
        self.gene_from_code(code).expect("code in range")
    }

    pub fn sample_genome<R: Rng + ?Sized>(&self, rng: &mut R) -> AttentionGenome {
        AttentionGenome {
            slots: (0..self.num_slots).map(|_| self.sample_gene(rng)).collect(),
        }
    }

    pub fn encode(&self, genome: &AttentionGenome) -> Vec<u32> {
        genome.slots.iter().map(|g| self.gene_code(g)).collect()
    }

    pub fn decode(&self, codes: &[u32]) -> Result<AttentionGenome> {
        if codes.len() != self.num_slots {
            return Err(Error::GenomeLength {
                expected: self.num_slots,
                got: codes.len(),
            });
        }
        let slots = codes
            .iter()
            .enumerate()
            .map(|(slot, &code)| {
                self.gene_from_code(code).ok_or(Error::GeneOutOfRange {
                    slot,
                    code,
                    choices: self.choices_per_slot(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(AttentionGenome { slots })
    }

    /// Resolved `(width, groups)` of an attention gene.
    pub fn resolve(&self, gene: &SlotGene) -> Option<(AttentionKind, usize, usize)> {
        match *gene {
            SlotGene::Identity => None,
            SlotGene::Attention {
                kind,
                width_idx,
                group_idx,
            } => Some((kind, self.widths[width_idx], self.groups[group_idx])),
        }
    }

    /// Checks a genome against the channel count at each insertion slot,
    /// collecting every violation.
    pub fn validate(
        &self,
        genome: &AttentionGenome,
        slot_channels: &[usize],
    ) -> std::result::Result<(), Vec<GenomeViolation>> {
        let mut errs = Vec::new();
        if genome.slots.len() != slot_channels.len() {
            errs.push(GenomeViolation::Length {
                expected: slot_channels.len(),
                got: genome.slots.len(),
            });
        }
        for (slot, (gene, &channels)) in genome.slots.iter().zip(slot_channels).enumerate() {
            let SlotGene::Attention {
                kind,
                width_idx,
                group_idx,
            } = *gene
            else {
                continue;
            };
            if !self.kinds.contains(&kind)
                || width_idx >= self.widths.len()
                || group_idx >= self.groups.len()
            {
                errs.push(GenomeViolation::IndexOutOfRange { slot });
                continue;
            }
            let groups = self.groups[group_idx];
            if channels % groups != 0 {
                errs.push(GenomeViolation::GroupDoesNotDivide {
                    slot,
                    groups,
                    channels,
                });
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlotGene {
    Identity,
    Attention {
        kind: AttentionKind,
        width_idx: usize,
        group_idx: usize,
    },
}

impl SlotGene {
    pub fn is_identity(&self) -> bool {
        matches!(self, SlotGene::Identity)
    }
}

/// One gene per eligible insertion slot, shallow to deep.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttentionGenome {
    pub slots: Vec<SlotGene>,
}

impl AttentionGenome {
    pub fn identity(num_slots: usize) -> Self {
        AttentionGenome {
            slots: vec![SlotGene::Identity; num_slots],
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenomeViolation {
    Length {
        expected: usize,
        got: usize,
    },
    IndexOutOfRange {
        slot: usize,
    },
    GroupDoesNotDivide {
        slot: usize,
        groups: usize,
        channels: usize,
    },
}

impl fmt::Display for GenomeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenomeViolation::Length { expected, got } => {
                write!(f, "genome has {got} slots, backbone has {expected}")
            }
            GenomeViolation::IndexOutOfRange { slot } => {
                write!(f, "slot {slot}: gene indices out of range")
            }
            GenomeViolation::GroupDoesNotDivide {
                slot,
                groups,
                channels,
            } => write!(f, "slot {slot}: group {groups} does not divide {channels}"),
        }
    }
}

/// Comma-separated canonical codes, e.g. `0,5,12,3`.
pub fn format_codes(codes: &[u32]) -> String {
    codes
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn parse_codes(s: &str) -> Result<Vec<u32>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| Error::InvalidInput(format!("bad genome code {t:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn small_space() -> SpaceParams {
        SpaceParams::new(
            vec![AttentionKind::Se, AttentionKind::Gsop, AttentionKind::Cbam],
            vec![8, 16],
            vec![1, 2],
            4,
        )
        .unwrap()
    }

    #[test]
    fn single_choice_space_samples_identity_or_se() {
        let space = SpaceParams::new(vec![AttentionKind::Se], vec![8], vec![1], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = space.sample_genome(&mut rng);
        assert_eq!(g.len(), 2);
        for gene in &g.slots {
            match space.resolve(gene) {
                None => {}
                Some((kind, w, grp)) => assert_eq!((kind, w, grp), (AttentionKind::Se, 8, 1)),
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let space = SpaceParams::desk(4);
        let a = space.sample_genome(&mut ChaCha8Rng::seed_from_u64(9));
        let b = space.sample_genome(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn slot_frequencies_are_uniform() {
        // Chi-square against the uniform multinomial; 12 degrees of freedom,
        // 99.9% quantile is 32.91.
        let space = small_space();
        assert_eq!(space.choices_per_slot(), 13);
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let mut counts = vec![[0u64; 13]; 4];
        let draws = 10_000;
        for _ in 0..draws {
            let codes = space.encode(&space.sample_genome(&mut rng));
            for (slot, c) in codes.iter().enumerate() {
                counts[slot][*c as usize] += 1;
            }
        }
        let expected = draws as f64 / 13.0;
        let sigma = (draws as f64 * (1.0 / 13.0) * (12.0 / 13.0)).sqrt();
        for slot in &counts {
            let chi2: f64 = slot
                .iter()
                .map(|&o| (o as f64 - expected).powi(2) / expected)
                .sum();
            assert!(chi2 < 32.91, "chi2 = {chi2}");
            for &o in slot {
                assert!((o as f64 - expected).abs() < 3.0 * sigma + 1.0);
            }
        }
    }

    #[test]
    fn cardinality_values() {
        let full = SpaceParams::full_scale(25);
        assert_eq!(full.choices_per_slot(), 49);
        let expect = BigUint::from(49u32).pow(25);
        assert_eq!(full.cardinality(), expect);
        assert_eq!(
            full.cardinality().to_string(),
            "1798465042647412146620280340569649349251249"
        );
        assert_eq!(small_space().cardinality(), BigUint::from(28561u32));
        let tiny = SpaceParams::new(vec![AttentionKind::Se], vec![8], vec![1], 1).unwrap();
        assert_eq!(tiny.cardinality(), BigUint::from(2u32));
    }

    #[test]
    fn cardinality_matches_enumeration() {
        let space = SpaceParams::new(vec![AttentionKind::Cbam], vec![8, 16], vec![1], 3).unwrap();
        let choices = space.choices_per_slot();
        let mut seen = HashSet::new();
        for a in 0..choices {
            for b in 0..choices {
                for c in 0..choices {
                    let g = space.decode(&[a, b, c]).unwrap();
                    seen.insert(space.encode(&g));
                }
            }
        }
        assert_eq!(BigUint::from(seen.len()), space.cardinality());
    }

    #[test]
    fn identity_genome_encodes_to_zeros() {
        let space = SpaceParams::desk(4);
        assert_eq!(space.encode(&AttentionGenome::identity(4)), vec![0, 0, 0, 0]);
    }

    #[test]
    fn decode_rejects_out_of_range_code() {
        let space = SpaceParams::new(
            vec![AttentionKind::Se, AttentionKind::Gsop, AttentionKind::Cbam],
            vec![8, 16],
            vec![1, 2],
            1,
        )
        .unwrap();
        match space.decode(&[13]) {
            Err(Error::GeneOutOfRange { slot: 0, code: 13, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validate_group_divisibility() {
        let space = SpaceParams::new(
            vec![AttentionKind::Se, AttentionKind::Cbam],
            vec![8],
            vec![1, 4, 8],
            1,
        )
        .unwrap();
        let se = AttentionGenome {
            slots: vec![SlotGene::Attention {
                kind: AttentionKind::Se,
                width_idx: 0,
                group_idx: 1,
            }],
        };
        assert!(space.validate(&se, &[16]).is_ok());
        let cbam = AttentionGenome {
            slots: vec![SlotGene::Attention {
                kind: AttentionKind::Cbam,
                width_idx: 0,
                group_idx: 2,
            }],
        };
        let errs = space.validate(&cbam, &[12]).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].to_string().contains("group 8 does not divide 12"));
        assert!(space
            .validate(&AttentionGenome::identity(1), &[7])
            .is_ok());
    }

    #[test]
    fn validate_collects_all_violations() {
        let space = SpaceParams::desk(2);
        let g = space.decode(&[48, 48]).unwrap(); // CBAM, width 64, group 8
        let errs = space.validate(&g, &[12, 6]).unwrap_err();
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn codes_text_round_trip() {
        let codes = vec![0, 5, 12, 3];
        assert_eq!(format_codes(&codes), "0,5,12,3");
        assert_eq!(parse_codes("0,5,12,3").unwrap(), codes);
    }

    proptest! {
        #[test]
        fn encode_decode_bijection(codes in proptest::collection::vec(0u32..49, 4)) {
            let space = SpaceParams::desk(4);
            let g = space.decode(&codes).unwrap();
            prop_assert_eq!(space.encode(&g), codes);
        }
    }
}
