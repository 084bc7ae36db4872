//! Three-party session: Alice and Bob send pulses to an untrusted node,
//! the node announces successful Bell-state projections, and the senders
//! reconcile bases, sift and post-process their bits.
//!
//! Messages travel over an in-process queue with a fixed round order per
//! slot (send, announce, reconcile). The public channel is assumed to be
//! authenticated; no authentication is implemented.

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::digest_of;
use crate::model::{
    Basis, CellKey, CellMap, ChannelParams, DetectorParams, IntensityLabel, ProtocolConfig,
};
use crate::montecarlo::{SlotChoice, SlotStream, DEFAULT_BATCH};
use crate::optics::{CoincidenceClass, OpticalTrain, Party, PulseDescriptor};
use crate::tally::{TallyCell, TallyMatrix};

/// Which outcomes make Bob flip his bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct BitFlipRule {
    /// Also flip on X-basis ψ+ (off by default: ψ+ is correlated in X).
    pub flip_x_psi_plus: bool,
}

impl BitFlipRule {
    pub fn flips(&self, basis: Basis, outcome: CoincidenceClass) -> bool {
        match (basis, outcome) {
            (_, CoincidenceClass::None) => false,
            (Basis::Z, _) => true,
            (Basis::X, CoincidenceClass::PsiMinus) => true,
            (Basis::X, CoincidenceClass::PsiPlus) => self.flip_x_psi_plus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionConfig {
    pub protocol: ProtocolConfig,
    pub channel: ChannelParams,
    pub detector: DetectorParams,
    pub seed: u64,
    pub n_slots: u64,
    pub bit_flip: BitFlipRule,
}

impl SessionConfig {
    pub fn new(
        protocol: ProtocolConfig,
        channel: ChannelParams,
        detector: DetectorParams,
        seed: u64,
        n_slots: u64,
    ) -> Self {
        Self {
            protocol,
            channel,
            detector,
            seed,
            n_slots,
            bit_flip: BitFlipRule::default(),
        }
    }

    /// Identifier shared by both parties' views of this session.
    pub fn session_id(&self) -> String {
        digest_of(self)[..16].to_string()
    }
}

/// Order in which the two senders' messages enter a round. Results do
/// not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoundOrder {
    #[default]
    AliceFirst,
    BobFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Announcement {
    pub slot_index: u64,
    pub outcome: CoincidenceClass,
}

/// Public basis and intensity of one slot, revealed during reconciliation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reveal {
    pub basis: Basis,
    pub intensity: IntensityLabel,
}

/// What one sender knows at the end of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyView {
    pub session_id: String,
    pub party: Party,
    /// Own private choices, one per slot.
    pub choices: Vec<SlotChoice>,
    /// The other sender's revealed choices, one per slot.
    pub peer: Vec<Reveal>,
    pub announcements: Vec<Announcement>,
}

enum Message {
    Pulse(PulseDescriptor),
    Announce(Announcement),
    Reveal(Party, Reveal),
}

struct Sender {
    party: Party,
    stream: SlotStream,
    choices: Vec<SlotChoice>,
    peer: Vec<Reveal>,
    announcements: Vec<Announcement>,
}

impl Sender {
    fn new(party: Party, seed: u64, first_slot: u64, capacity: usize) -> Self {
        let stream = match party {
            Party::Alice => SlotStream::alice(seed, first_slot),
            Party::Bob => SlotStream::bob(seed, first_slot),
        };
        Self {
            party,
            stream,
            choices: Vec::with_capacity(capacity),
            peer: Vec::with_capacity(capacity),
            announcements: Vec::new(),
        }
    }

    fn send(&mut self, cfg: &ProtocolConfig) -> Message {
        let c = self.stream.choice(cfg);
        self.choices.push(c);
        Message::Pulse(c.pulse(self.party, cfg))
    }

    fn reveal(&self) -> Message {
        let c = self.choices.last().expect("reveal follows send");
        Message::Reveal(
            self.party,
            Reveal {
                basis: c.basis,
                intensity: c.intensity,
            },
        )
    }

    fn receive(&mut self, msg: &Message) {
        match msg {
            Message::Announce(a) => self.announcements.push(*a),
            Message::Reveal(from, r) if *from != self.party => self.peer.push(*r),
            _ => {}
        }
    }
}

struct Node {
    stream: SlotStream,
    train: OpticalTrain,
    alice: Option<PulseDescriptor>,
    bob: Option<PulseDescriptor>,
}

impl Node {
    fn receive(&mut self, msg: Message) {
        if let Message::Pulse(p) = msg {
            match p.party {
                Party::Alice => self.alice = Some(p),
                Party::Bob => self.bob = Some(p),
            }
        }
    }

    /// Measures the slot's pair of pulses; `Some` on a successful projection.
    fn announce(&mut self, slot_index: u64) -> Option<Message> {
        let a = self.alice.take().expect("Alice's pulse arrived");
        let b = self.bob.take().expect("Bob's pulse arrived");
        let u = self.stream.detector_uniforms();
        let (_, outcome) =
            self.train
                .measure(&self.train.transmit(&a), &self.train.transmit(&b), u);
        outcome
            .is_success()
            .then_some(Message::Announce(Announcement {
                slot_index,
                outcome,
            }))
    }
}

struct Segment {
    alice: Sender,
    bob: Sender,
}

fn run_segment(
    cfg: &SessionConfig,
    train: &OpticalTrain,
    order: RoundOrder,
    start: u64,
    end: u64,
) -> Segment {
    let cap = (end - start) as usize;
    let mut alice = Sender::new(Party::Alice, cfg.seed, start, cap);
    let mut bob = Sender::new(Party::Bob, cfg.seed, start, cap);
    let mut node = Node {
        stream: SlotStream::node(cfg.seed, start),
        train: *train,
        alice: None,
        bob: None,
    };
    let mut queue = VecDeque::with_capacity(4);
    for slot in start..end {
        // Send round.
        match order {
            RoundOrder::AliceFirst => {
                queue.push_back(alice.send(&cfg.protocol));
                queue.push_back(bob.send(&cfg.protocol));
            }
            RoundOrder::BobFirst => {
                queue.push_back(bob.send(&cfg.protocol));
                queue.push_back(alice.send(&cfg.protocol));
            }
        }
        while let Some(m) = queue.pop_front() {
            node.receive(m);
        }
        // Announce round.
        if let Some(m) = node.announce(slot) {
            queue.push_back(m);
        }
        // Reconcile round.
        match order {
            RoundOrder::AliceFirst => {
                queue.push_back(alice.reveal());
                queue.push_back(bob.reveal());
            }
            RoundOrder::BobFirst => {
                queue.push_back(bob.reveal());
                queue.push_back(alice.reveal());
            }
        }
        while let Some(m) = queue.pop_front() {
            alice.receive(&m);
            bob.receive(&m);
        }
    }
    Segment { alice, bob }
}

/// Runs a session on the reference single-threaded scheduler.
pub fn run_session(cfg: &SessionConfig) -> Result<(PartyView, PartyView, TallyMatrix)> {
    run_session_with(cfg, RoundOrder::AliceFirst, false)
}

/// Runs a session. With `parallel`, independent slot ranges run
/// concurrently and are joined in slot order; views and tallies are the
/// same as with the reference scheduler.
pub fn run_session_with(
    cfg: &SessionConfig,
    order: RoundOrder,
    parallel: bool,
) -> Result<(PartyView, PartyView, TallyMatrix)> {
    if cfg.n_slots == 0 {
        return Err(Error::param("a session needs at least one slot"));
    }
    cfg.protocol.check_sampling()?;
    let train = OpticalTrain::new(&cfg.channel, &cfg.detector)?;
    let ranges: Vec<(u64, u64)> = (0..cfg.n_slots)
        .step_by(DEFAULT_BATCH as usize)
        .map(|s| (s, (s + DEFAULT_BATCH).min(cfg.n_slots)))
        .collect();
    let segments: Vec<Segment> = if parallel {
        ranges
            .par_iter()
            .map(|&(s, e)| run_segment(cfg, &train, order, s, e))
            .collect()
    } else {
        ranges
            .iter()
            .map(|&(s, e)| run_segment(cfg, &train, order, s, e))
            .collect()
    };
    let id = cfg.session_id();
    let join = |party: Party| {
        let mut view = PartyView {
            session_id: id.clone(),
            party,
            choices: Vec::with_capacity(cfg.n_slots as usize),
            peer: Vec::with_capacity(cfg.n_slots as usize),
            announcements: Vec::new(),
        };
        for seg in &segments {
            let s = match party {
                Party::Alice => &seg.alice,
                Party::Bob => &seg.bob,
            };
            view.choices.extend_from_slice(&s.choices);
            view.peer.extend_from_slice(&s.peer);
            view.announcements.extend_from_slice(&s.announcements);
        }
        view
    };
    let alice = join(Party::Alice);
    let bob = join(Party::Bob);
    let tally = session_tally(&alice, &bob, cfg.bit_flip)?;
    Ok((alice, bob, tally))
}

/// How a retained slot is used after sifting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SiftRole {
    /// Z basis, both signal: raw key.
    Key,
    /// Everything else: parameter estimation.
    Estimation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiftedEntry {
    pub slot_index: u64,
    pub basis: Basis,
    pub intensity_a: IntensityLabel,
    pub intensity_b: IntensityLabel,
    pub bit: bool,
    pub outcome: CoincidenceClass,
}

impl SiftedEntry {
    pub fn cell(&self) -> CellKey {
        CellKey::new(self.basis, self.intensity_a, self.intensity_b)
    }

    pub fn role(&self) -> SiftRole {
        if self.basis == Basis::Z
            && self.intensity_a == IntensityLabel::Signal
            && self.intensity_b == IntensityLabel::Signal
        {
            SiftRole::Key
        } else {
            SiftRole::Estimation
        }
    }
}

/// One party's bits on announced, basis-matched slots, in slot order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiftedKey {
    pub session_id: String,
    pub party: Party,
    pub entries: Vec<SiftedEntry>,
}

impl SiftedKey {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_role(&self, role: SiftRole) -> impl Iterator<Item = &SiftedEntry> {
        self.entries.iter().filter(move |e| e.role() == role)
    }

    pub fn in_basis(&self, basis: Basis) -> impl Iterator<Item = &SiftedEntry> {
        self.entries.iter().filter(move |e| e.basis == basis)
    }
}

fn sift_one(view: &PartyView) -> Result<SiftedKey> {
    let n = view.choices.len();
    if view.peer.len() != n {
        return Err(Error::Session(format!(
            "{:?} holds {} choices but {} peer reveals",
            view.party,
            n,
            view.peer.len()
        )));
    }
    let mut entries = Vec::new();
    for a in &view.announcements {
        let i = a.slot_index as usize;
        if i >= n {
            return Err(Error::Session(format!(
                "announcement for slot {i} beyond {n} slots"
            )));
        }
        let own = view.choices[i];
        let peer = view.peer[i];
        if own.basis != peer.basis {
            continue;
        }
        let (intensity_a, intensity_b) = match view.party {
            Party::Alice => (own.intensity, peer.intensity),
            Party::Bob => (peer.intensity, own.intensity),
        };
        entries.push(SiftedEntry {
            slot_index: a.slot_index,
            basis: own.basis,
            intensity_a,
            intensity_b,
            bit: own.bit,
            outcome: a.outcome,
        });
    }
    Ok(SiftedKey {
        session_id: view.session_id.clone(),
        party: view.party,
        entries,
    })
}

/// Keeps announced slots where both senders used the same basis.
pub fn sift(alice: &PartyView, bob: &PartyView) -> Result<(SiftedKey, SiftedKey)> {
    if alice.session_id != bob.session_id {
        return Err(Error::Session(format!(
            "views belong to different sessions ({} vs {})",
            alice.session_id, bob.session_id
        )));
    }
    if alice.announcements != bob.announcements {
        return Err(Error::Session(
            "the two views received different announcements".into(),
        ));
    }
    Ok((sift_one(alice)?, sift_one(bob)?))
}

/// Bob's post-processing: flip his bit wherever the announced outcome is
/// anticorrelated in that basis.
pub fn apply_bit_flip(key_b: &SiftedKey, rule: BitFlipRule) -> Result<SiftedKey> {
    let mut out = key_b.clone();
    for e in &mut out.entries {
        if e.outcome == CoincidenceClass::None {
            return Err(Error::Session(format!(
                "slot {} has no recorded outcome",
                e.slot_index
            )));
        }
        if rule.flips(e.basis, e.outcome) {
            e.bit = !e.bit;
        }
    }
    Ok(out)
}

/// Retained slots and disagreements per cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SiftedCounts {
    pub retained: u64,
    pub errors: u64,
}

impl SiftedCounts {
    pub fn rate(&self) -> Option<f64> {
        (self.retained > 0).then(|| self.errors as f64 / self.retained as f64)
    }
}

/// Disagreements between aligned sifted keys, per cell.
pub fn measure_sifted_qber(key_a: &SiftedKey, key_b: &SiftedKey) -> Result<CellMap<SiftedCounts>> {
    if key_a.len() != key_b.len() {
        return Err(Error::Session(format!(
            "key lengths differ: {} vs {}",
            key_a.len(),
            key_b.len()
        )));
    }
    let mut out = CellMap::<SiftedCounts>::default();
    for (a, b) in key_a.entries.iter().zip(&key_b.entries) {
        if a.slot_index != b.slot_index || a.cell() != b.cell() {
            return Err(Error::Session(format!(
                "keys misaligned at slot {}",
                a.slot_index
            )));
        }
        let c = &mut out[a.cell()];
        c.retained += 1;
        c.errors += u64::from(a.bit != b.bit);
    }
    Ok(out)
}

/// Session tallies: pulses sent from the reconciled choices, coincidences
/// and errors from the sifted, post-processed keys.
fn session_tally(alice: &PartyView, bob: &PartyView, rule: BitFlipRule) -> Result<TallyMatrix> {
    let mut sent = CellMap::<u64>::default();
    for (a, b) in alice.choices.iter().zip(&alice.peer) {
        if a.basis == b.basis {
            sent[CellKey::new(a.basis, a.intensity, b.intensity)] += 1;
        }
    }
    let (ka, kb) = sift(alice, bob)?;
    let qber = measure_sifted_qber(&ka, &apply_bit_flip(&kb, rule)?)?;
    let cells =
        CellMap::try_from_fn(|k| TallyCell::new(sent[k], qber[k].retained, qber[k].errors))?;
    TallyMatrix::from_cells(cells)
}

#[derive(Serialize)]
struct ChoiceRecord {
    intensity: IntensityLabel,
    basis: Basis,
    bit: u8,
    phase: f64,
}

impl From<&SlotChoice> for ChoiceRecord {
    fn from(c: &SlotChoice) -> Self {
        Self {
            intensity: c.intensity,
            basis: c.basis,
            bit: u8::from(c.bit),
            phase: c.phase,
        }
    }
}

#[derive(Serialize)]
struct TranscriptRecord {
    slot: u64,
    alice: ChoiceRecord,
    bob: ChoiceRecord,
    announcement: Option<&'static str>,
}

/// Writes one JSON object per slot: both parties' choices and the node's
/// announcement, if any.
pub fn write_transcript<W: Write>(alice: &PartyView, bob: &PartyView, mut out: W) -> Result<()> {
    if alice.session_id != bob.session_id || alice.choices.len() != bob.choices.len() {
        return Err(Error::Session("views belong to different sessions".into()));
    }
    let mut ann = alice.announcements.iter().peekable();
    for (i, (a, b)) in alice.choices.iter().zip(&bob.choices).enumerate() {
        let slot = i as u64;
        let announcement = match ann.peek() {
            Some(x) if x.slot_index == slot => ann.next().map(|x| x.outcome.as_str()),
            _ => None,
        };
        let rec = TranscriptRecord {
            slot,
            alice: a.into(),
            bob: b.into(),
            announcement,
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n")
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::run_monte_carlo;

    fn small(seed: u64, n: u64) -> SessionConfig {
        // Short fiber and high efficiency give many announcements.
        let ch = ChannelParams {
            fiber_length_km: 0.0,
            ..ChannelParams::default()
        };
        let det = DetectorParams {
            efficiency: 0.9,
            ..DetectorParams::default()
        };
        let protocol = ProtocolConfig {
            intensities: crate::model::Intensities::new(0.8, 0.4, 0.05),
            intensity_probabilities: [0.6, 0.3, 0.1],
            ..ProtocolConfig::default()
        };
        SessionConfig::new(protocol, ch, det, seed, n)
    }

    #[test]
    fn deterministic() {
        let cfg = small(5, 20_000);
        assert_eq!(run_session(&cfg).unwrap(), run_session(&cfg).unwrap());
    }

    #[test]
    fn zero_intensity_without_dark_counts_announces_nothing() {
        let mut cfg = small(1, 5000);
        cfg.protocol.intensities = crate::model::Intensities::new(0.0, 0.0, 0.0);
        cfg.detector.dark_count_probability = 0.0;
        let (a, b, t) = run_session(&cfg).unwrap();
        assert!(a.announcements.is_empty());
        let (ka, kb) = sift(&a, &b).unwrap();
        assert!(ka.is_empty() && kb.is_empty());
        assert_eq!(t.total_coincidences(), 0);
    }

    #[test]
    fn tallies_match_monte_carlo() {
        for layout in [
            crate::model::DetectorLayout::OnePbs,
            crate::model::DetectorLayout::Full,
        ] {
            let mut cfg = small(11, 50_000);
            cfg.detector.layout = layout;
            let (_, _, t) = run_session(&cfg).unwrap();
            let mc = run_monte_carlo(
                &cfg.protocol,
                &cfg.channel,
                &cfg.detector,
                cfg.n_slots,
                cfg.seed,
            )
            .unwrap();
            assert_eq!(t, mc);
            assert!(
                t.total_coincidences() > 100,
                "{layout:?} {}",
                t.total_coincidences()
            );
        }
    }

    #[test]
    fn order_and_parallelism_do_not_matter() {
        let cfg = small(3, 3 * DEFAULT_BATCH + 17);
        let reference = run_session(&cfg).unwrap();
        assert_eq!(
            run_session_with(&cfg, RoundOrder::BobFirst, false).unwrap(),
            reference
        );
        assert_eq!(
            run_session_with(&cfg, RoundOrder::AliceFirst, true).unwrap(),
            reference
        );
    }

    #[test]
    fn sifted_keys_align_and_match_tallies() {
        let cfg = small(8, 40_000);
        let (a, b, t) = run_session(&cfg).unwrap();
        let (ka, kb) = sift(&a, &b).unwrap();
        assert_eq!(ka.len(), kb.len());
        let q = measure_sifted_qber(&ka, &apply_bit_flip(&kb, BitFlipRule::default()).unwrap())
            .unwrap();
        for k in CellKey::all() {
            assert_eq!(q[k].retained, t.cell(k).coincidences);
            assert_eq!(q[k].rate(), t.qber(k));
        }
        assert!(ka.with_role(SiftRole::Key).count() > 0);
    }

    #[test]
    fn noiseless_z_keys_agree_after_flip() {
        let mut cfg = small(21, 60_000);
        cfg.channel.misalignment = 0.0;
        cfg.detector.dark_count_probability = 0.0;
        let (a, b, _) = run_session(&cfg).unwrap();
        let (ka, kb) = sift(&a, &b).unwrap();
        let kb = apply_bit_flip(&kb, BitFlipRule::default()).unwrap();
        let z: Vec<_> = ka.in_basis(Basis::Z).zip(kb.in_basis(Basis::Z)).collect();
        assert!(z.len() > 100);
        assert!(z.iter().all(|(x, y)| x.bit == y.bit));
    }

    #[test]
    fn session_mismatch_and_misalignment_rejected() {
        let (a, _, _) = run_session(&small(1, 1000)).unwrap();
        let (_, b, _) = run_session(&small(2, 1000)).unwrap();
        assert!(matches!(sift(&a, &b), Err(Error::Session(_))));
        let k = SiftedKey {
            session_id: "x".into(),
            party: Party::Alice,
            entries: vec![],
        };
        let mut k2 = k.clone();
        k2.entries.push(SiftedEntry {
            slot_index: 0,
            basis: Basis::Z,
            intensity_a: IntensityLabel::Signal,
            intensity_b: IntensityLabel::Signal,
            bit: false,
            outcome: CoincidenceClass::None,
        });
        assert!(measure_sifted_qber(&k, &k2).is_err());
        assert!(apply_bit_flip(&k2, BitFlipRule::default()).is_err());
        assert!(apply_bit_flip(&k, BitFlipRule::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn identical_and_complementary_keys() {
        let cfg = small(4, 20_000);
        let (a, b, _) = run_session(&cfg).unwrap();
        let (ka, _) = sift(&a, &b).unwrap();
        let q = measure_sifted_qber(&ka, &ka).unwrap();
        assert!(q.iter().all(|(_, c)| c.errors == 0));
        let mut inv = ka.clone();
        inv.entries.iter_mut().for_each(|e| e.bit = !e.bit);
        let q = measure_sifted_qber(&ka, &inv).unwrap();
        assert!(q.iter().all(|(_, c)| c.errors == c.retained));
    }

    #[test]
    fn flip_rule() {
        let d = BitFlipRule::default();
        assert!(d.flips(Basis::Z, CoincidenceClass::PsiPlus));
        assert!(d.flips(Basis::Z, CoincidenceClass::PsiMinus));
        assert!(d.flips(Basis::X, CoincidenceClass::PsiMinus));
        assert!(!d.flips(Basis::X, CoincidenceClass::PsiPlus));
        assert!(BitFlipRule {
            flip_x_psi_plus: true
        }
        .flips(Basis::X, CoincidenceClass::PsiPlus));
    }

    #[test]
    fn transcript_has_one_line_per_slot() {
        let cfg = small(9, 500);
        let (a, b, _) = run_session(&cfg).unwrap();
        let mut buf = Vec::new();
        write_transcript(&a, &b, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 500);
        let announced = text
            .lines()
            .filter(|l| !l.contains("\"announcement\":null"))
            .count();
        assert_eq!(announced, a.announcements.len());
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["slot"], 0);
    }
}
