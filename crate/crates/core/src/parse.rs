//! Extraction of a Q-table and an optimal episode from free-form model
//! output, and programmatic checking of the output requirements.
//!
//! Parsing is heuristic and never fails: anything it cannot make sense of
//! is skipped and explained in `parse_notes`.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::mdp::{discounted_return, Episode, StateId, WorkflowSpec};
use crate::prompt::GammaMode;
use crate::qlearn::{greedy_episode, QTable};

/// Allowed gap between a path's discounted return and the optimal return.
pub const RETURN_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QEntry {
    pub state: StateId,
    pub action: StateId,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedResult {
    pub q_entries: Vec<QEntry>,
    pub optimal_path: Vec<StateId>,
    pub path_q_values: Option<Vec<f64>>,
    /// The model's own yes/no answer to the iterative check, if it gave one.
    pub self_assessment: Option<bool>,
    pub parse_notes: Vec<String>,
}

impl ParsedResult {
    pub fn reported(&self, state: &StateId, action: &StateId) -> Option<f64> {
        self.q_entries
            .iter()
            .find(|e| &e.state == state && &e.action == action)
            .map(|e| e.value)
    }
}

/// Maps abbreviations, full labels and bare names (all case-insensitive)
/// to state ids. Keys claimed by two different states are ambiguous.
struct StateMatcher {
    keys: Vec<(String, Option<StateId>)>,
}

#[derive(Debug, Clone)]
struct Mention {
    start: usize,
    end: usize,
    id: Option<StateId>,
}

impl StateMatcher {
    fn new(spec: &WorkflowSpec) -> Self {
        let mut keys: Vec<(String, Option<StateId>)> = Vec::new();
        for state in &spec.states {
            for key in [state.id.as_str(), state.label.as_str(), state.name()] {
                let key = key.trim().to_lowercase();
                if key.is_empty() {
                    continue;
                }
                match keys.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, id)) => {
                        if id.as_ref() != Some(&state.id) {
                            *id = None;
                        }
                    }
                    None => keys.push((key, Some(state.id.clone()))),
                }
            }
        }
        keys.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Self { keys }
    }

    /// Non-overlapping whole-word mentions in `hay` (already lowercased),
    /// longest keys first, returned in text order.
    fn mentions(&self, hay: &str) -> Vec<Mention> {
        let mut found: Vec<Mention> = Vec::new();
        for (key, id) in &self.keys {
            for (start, _) in hay.match_indices(key.as_str()) {
                let end = start + key.len();
                if !is_boundary(hay, start, end) {
                    continue;
                }
                if found.iter().any(|m| start < m.end && m.start < end) {
                    continue;
                }
                found.push(Mention {
                    start,
                    end,
                    id: id.clone(),
                });
            }
        }
        found.sort_by_key(|m| m.start);
        found
    }
}

fn is_boundary(hay: &str, start: usize, end: usize) -> bool {
    let before = hay[..start].chars().next_back();
    let after = hay[end..].chars().next();
    !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
}

/// Decimal numbers with optional sign and exponent, not glued to a word.
fn numbers(hay: &str) -> Vec<(usize, f64)> {
    let bytes = hay.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        let mut j = i;
        if bytes[j] == b'-' || bytes[j] == b'+' {
            j += 1;
        }
        let digits_from = j;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        let mut has_digits = j > digits_from;
        if j < bytes.len() && bytes[j] == b'.' {
            let frac_from = j + 1;
            let mut k = frac_from;
            while k < bytes.len() && bytes[k].is_ascii_digit() {
                k += 1;
            }
            if k > frac_from {
                has_digits = true;
                j = k;
            } else if has_digits {
                j = frac_from;
            }
        }
        if !has_digits {
            i = start + hay[start..].chars().next().map_or(1, char::len_utf8);
            continue;
        }
        if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
            let mut k = j + 1;
            if k < bytes.len() && (bytes[k] == b'-' || bytes[k] == b'+') {
                k += 1;
            }
            let exp_from = k;
            while k < bytes.len() && bytes[k].is_ascii_digit() {
                k += 1;
            }
            if k > exp_from {
                j = k;
            }
        }
        let glued_before = hay[..start]
            .chars()
            .next_back()
            .is_some_and(|c| c.is_alphanumeric() || c == '_');
        let glued_after = hay[j..]
            .chars()
            .next()
            .is_some_and(|c| c.is_alphabetic() || c == '_');
        if !glued_before && !glued_after {
            if let Ok(v) = hay[start..j].trim_end_matches('.').parse::<f64>() {
                if v.is_finite() {
                    out.push((start, v));
                }
            }
        }
        i = j.max(start + 1);
        while i < bytes.len() && !hay.is_char_boundary(i) {
            i += 1;
        }
    }
    out
}

const ARROWS: [&str; 5] = ["→", "->", "=>", "⟶", "➔"];

/// A sequence of states read off one line, or chained across pair lines.
#[derive(Debug, Clone)]
struct Candidate {
    path: Vec<StateId>,
    /// One value per hop when every hop carried a number.
    values: Option<Vec<f64>>,
    source: Source,
}

/// Where a candidate came from, weakest first. A Q-table listed in state
/// order can chain into a path by accident, so table chains rank lowest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Source {
    TableChain,
    PairChain,
    Line,
}

struct PairLine {
    state: StateId,
    action: StateId,
    value: Option<f64>,
    from_table: bool,
}

pub fn parse_response(text: &str, spec: &WorkflowSpec) -> ParsedResult {
    let matcher = StateMatcher::new(spec);
    let mut result = ParsedResult::default();
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut chain: Vec<PairLine> = Vec::new();
    let mut matrix_header: Option<Vec<Option<StateId>>> = None;
    let mut ambiguous_noted = HashSet::new();

    result.self_assessment = self_assessment(text);

    for raw in text.lines() {
        let line = raw.replace('\u{2212}', "-").to_lowercase();
        let mentions = matcher.mentions(&line);
        for m in mentions.iter().filter(|m| m.id.is_none()) {
            let token = line[m.start..m.end].to_owned();
            if ambiguous_noted.insert(token.clone()) {
                result
                    .parse_notes
                    .push(format!("ambiguous state mention '{token}' ignored"));
            }
        }

        let mut pair: Option<PairLine> = None;
        if line.contains('|') {
            pair = table_row(&line, &matcher, spec, &mut matrix_header, &mut result);
        } else {
            matrix_header = None;
            if let Some(row) = plain_row(&line, &mentions) {
                if let Some(value) = row.value {
                    result.q_entries.push(QEntry {
                        state: row.state.clone(),
                        action: row.action.clone(),
                        value,
                    });
                }
                pair = Some(row);
            }
            if let Some(candidate) = line_path(&line, &mentions) {
                if candidate.path.len() > 2 {
                    candidates.push(candidate);
                } else if pair.is_none() {
                    pair = Some(PairLine {
                        state: candidate.path[0].clone(),
                        action: candidate.path[1].clone(),
                        value: candidate.values.and_then(|v| v.first().copied()),
                        from_table: false,
                    });
                }
            }
        }

        match pair {
            Some(p) => {
                let breaks = chain
                    .last()
                    .is_some_and(|last| last.action != p.state || last.from_table != p.from_table);
                if breaks {
                    candidates.push(chain_candidate(&chain));
                    chain.clear();
                }
                chain.push(p);
            }
            None => {
                let blank = line.trim().is_empty() || is_table_rule(&line);
                if !blank && !chain.is_empty() {
                    candidates.push(chain_candidate(&chain));
                    chain.clear();
                }
            }
        }
    }
    if !chain.is_empty() {
        candidates.push(chain_candidate(&chain));
    }

    dedup_entries(&mut result);

    // Earliest candidate wins ties.
    let rank = |c: &Candidate| {
        (
            c.source,
            c.path.first() == Some(&spec.start),
            c.path.last() == Some(&spec.terminal),
            c.path.len(),
            c.values.is_some(),
        )
    };
    let best = candidates
        .into_iter()
        .filter_map(|c| from_start(c, spec))
        .fold(None::<Candidate>, |best, c| match best {
            Some(b) if rank(&b) >= rank(&c) => Some(b),
            _ => Some(c),
        });

    match best {
        Some(c) => {
            result.path_q_values = c.values.or_else(|| {
                c.path
                    .windows(2)
                    .map(|hop| result.reported(&hop[0], &hop[1]))
                    .collect()
            });
            result.optimal_path = c.path;
        }
        None => result.parse_notes.push("no path found".to_owned()),
    }
    if result.q_entries.is_empty() {
        result.parse_notes.push("no Q-table entries found".to_owned());
    }
    result
}

fn self_assessment(text: &str) -> Option<bool> {
    let first = text.lines().map(str::trim).find(|l| !l.is_empty())?;
    let first = first
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    let word: String = first.chars().take_while(|c| c.is_alphabetic()).collect();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

fn is_table_rule(line: &str) -> bool {
    let t = line.trim();
    !t.is_empty() && t.chars().all(|c| matches!(c, '|' | '-' | ':' | ' ' | '+' | '='))
}

/// The single state a span of text names, if it names exactly one.
fn single_state(mentions: &[Mention], from: usize, to: usize) -> Option<StateId> {
    let mut ids = mentions
        .iter()
        .filter(|m| m.start >= from && m.end <= to)
        .map(|m| m.id.clone());
    let first = ids.next()??;
    ids.all(|id| id.as_ref() == Some(&first)).then_some(first)
}

fn table_row(
    line: &str,
    matcher: &StateMatcher,
    spec: &WorkflowSpec,
    matrix_header: &mut Option<Vec<Option<StateId>>>,
    result: &mut ParsedResult,
) -> Option<PairLine> {
    if is_table_rule(line) {
        return None;
    }
    let trimmed = line.trim().trim_matches('|');
    let cells: Vec<&str> = trimmed.split('|').collect();
    enum Cell {
        State(StateId),
        Number(f64),
        Other,
    }
    let parsed: Vec<Cell> = cells
        .iter()
        .map(|cell| {
            let mentions = matcher.mentions(cell);
            if let Some(id) = single_state(&mentions, 0, cell.len()) {
                return Cell::State(id);
            }
            if mentions.is_empty() {
                if let Some(&(_, v)) = numbers(cell).first() {
                    return Cell::Number(v);
                }
            }
            Cell::Other
        })
        .collect();

    let state_cells: Vec<(usize, &StateId)> = parsed
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match c {
            Cell::State(id) => Some((i, id)),
            _ => None,
        })
        .collect();
    let has_number = parsed.iter().any(|c| matches!(c, Cell::Number(_)));

    if state_cells.len() >= 2 && !has_number && state_cells[0].0 > 0 {
        // column header of a state-by-action matrix
        let header = parsed
            .iter()
            .map(|c| match c {
                Cell::State(id) => Some(id.clone()),
                _ => None,
            })
            .collect();
        *matrix_header = Some(header);
        return None;
    }

    if state_cells.len() >= 2 {
        let (second_at, _) = state_cells[1];
        let value = parsed[second_at..].iter().find_map(|c| match c {
            Cell::Number(v) => Some(*v),
            _ => None,
        });
        let (state, action) = (state_cells[0].1.clone(), state_cells[1].1.clone());
        if let Some(value) = value {
            result.q_entries.push(QEntry {
                state: state.clone(),
                action: action.clone(),
                value,
            });
        }
        return Some(PairLine {
            state,
            action,
            value,
            from_table: true,
        });
    }

    if let (Some(header), [(0, row_state)]) = (matrix_header.as_ref(), state_cells.as_slice()) {
        for (col, cell) in parsed.iter().enumerate() {
            let (Cell::Number(v), Some(Some(action))) = (cell, header.get(col)) else {
                continue;
            };
            if spec.is_valid_pair(row_state, action) {
                result.q_entries.push(QEntry {
                    state: (*row_state).clone(),
                    action: action.clone(),
                    value: *v,
                });
            } else {
                result.parse_notes.push(format!(
                    "matrix cell {row_state} -> {action} is not a valid transition; skipped"
                ));
            }
        }
        return None;
    }

    if state_cells.is_empty() {
        *matrix_header = None;
    }
    None
}

/// `ST IR -4.69`, `Q(ST, IR) = -4.69`, `ST -> IR: -4.69`: exactly two
/// state mentions followed by a number.
fn plain_row(line: &str, mentions: &[Mention]) -> Option<PairLine> {
    let named: Vec<&Mention> = mentions.iter().filter(|m| m.id.is_some()).collect();
    if named.len() != 2 || mentions.len() != 2 {
        return None;
    }
    let after = named[1].end;
    let value = numbers(&line[after..]).first().map(|&(_, v)| v)?;
    Some(PairLine {
        state: named[0].id.clone()?,
        action: named[1].id.clone()?,
        value: Some(value),
        from_table: false,
    })
}

/// Splits a line on path separators and reads one state per segment.
fn line_path(line: &str, mentions: &[Mention]) -> Option<Candidate> {
    let inside_mention = |pos: usize| mentions.iter().any(|m| pos >= m.start && pos < m.end);
    let mut cuts: Vec<(usize, usize)> = Vec::new();
    for arrow in ARROWS {
        cuts.extend(line.match_indices(arrow).map(|(i, s)| (i, i + s.len())));
    }
    if cuts.is_empty() {
        cuts.extend(line.match_indices(',').map(|(i, s)| (i, i + s.len())));
    }
    if cuts.is_empty() {
        cuts.extend(line.match_indices(" to ").map(|(i, s)| (i, i + s.len())));
    }
    cuts.retain(|&(s, _)| !inside_mention(s));
    if cuts.is_empty() {
        return None;
    }
    cuts.sort_unstable();
    // "=>" contains no "->" but "-->" would match "->" once; drop overlaps.
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for cut in cuts {
        match merged.last_mut() {
            Some(last) if cut.0 < last.1 => last.1 = last.1.max(cut.1),
            _ => merged.push(cut),
        }
    }

    let mut bounds = Vec::with_capacity(merged.len() + 1);
    let mut from = 0;
    for (s, e) in merged {
        bounds.push((from, s));
        from = e;
    }
    bounds.push((from, line.len()));

    let segments: Vec<(Option<StateId>, Option<f64>)> = bounds
        .iter()
        .map(|&(a, b)| {
            let id = single_state(mentions, a, b);
            let value = numbers(&line[a..b])
                .into_iter()
                .map(|(p, v)| (a + p, v))
                .find(|&(p, _)| !inside_mention(p))
                .map(|(_, v)| v);
            (id, value)
        })
        .collect();

    // longest run of consecutive recognized segments
    let mut best: Option<(usize, usize)> = None;
    let mut run_start = None;
    for i in 0..=segments.len() {
        let known = i < segments.len() && segments[i].0.is_some();
        match (known, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                if best.is_none_or(|(bs, be)| i - s > be - bs) {
                    best = Some((s, i));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    let (s, e) = best.filter(|(s, e)| e - s >= 2)?;
    let run = &segments[s..e];
    let path: Vec<StateId> = run.iter().map(|(id, _)| id.clone().expect("known")).collect();
    let hop_values: Vec<Option<f64>> = run[..run.len() - 1].iter().map(|(_, v)| *v).collect();
    let values = hop_values.into_iter().collect::<Option<Vec<f64>>>();
    Some(Candidate {
        path,
        values,
        source: Source::Line,
    })
}

fn chain_candidate(chain: &[PairLine]) -> Candidate {
    let mut path = vec![chain[0].state.clone()];
    path.extend(chain.iter().map(|p| p.action.clone()));
    let values = chain.iter().map(|p| p.value).collect::<Option<Vec<f64>>>();
    let source = if chain[0].from_table {
        Source::TableChain
    } else {
        Source::PairChain
    };
    Candidate {
        path,
        values,
        source,
    }
}

/// Trims a candidate to begin at the start state, when it mentions it, and
/// drops a trailing terminal self-loop.
fn from_start(mut c: Candidate, spec: &WorkflowSpec) -> Option<Candidate> {
    let offset = c.path.iter().position(|s| s == &spec.start).unwrap_or(0);
    c.path.drain(..offset);
    if let Some(values) = c.values.as_mut() {
        values.drain(..offset);
    }
    while c.path.len() >= 2
        && c.path[c.path.len() - 1] == spec.terminal
        && c.path[c.path.len() - 2] == spec.terminal
    {
        c.path.pop();
        if let Some(values) = c.values.as_mut() {
            values.pop();
        }
    }
    (c.path.len() >= 2).then_some(c)
}

fn dedup_entries(result: &mut ParsedResult) {
    let mut kept: Vec<QEntry> = Vec::with_capacity(result.q_entries.len());
    for entry in result.q_entries.drain(..) {
        match kept
            .iter()
            .find(|k| k.state == entry.state && k.action == entry.action)
        {
            Some(k) => {
                if k.value != entry.value {
                    result.parse_notes.push(format!(
                        "{} -> {} reported twice ({} and {}); kept the first",
                        entry.state, entry.action, k.value, entry.value
                    ));
                }
            }
            None => kept.push(entry),
        }
    }
    result.q_entries = kept;
}

/// Canonical text form of a Q-table and an episode. Values are printed in
/// shortest round-trip form so [`parse_response`] recovers them exactly.
pub fn render_canonical(spec: &WorkflowSpec, q: &QTable, episode: &Episode) -> String {
    let mut out = String::from("Q-table:\n| State | Action | Q-value |\n|---|---|---|\n");
    for (s, a, v) in q.iter() {
        let _ = writeln!(out, "| {s} | {a} | {} |", v + 0.0);
    }
    let path = episode.path();
    let labels: Vec<&str> = path
        .iter()
        .map(|id| spec.state(id).map_or(id.as_str(), |s| s.label.as_str()))
        .collect();
    let _ = writeln!(out, "\nOptimal episode:\n{}", labels.join(" → "));
    out.push_str("\nQ-values along the optimal episode:\n");
    for t in &episode.transitions {
        let v = q.get(&t.state, &t.action).unwrap_or(f64::NAN);
        let _ = writeln!(out, "{} -> {}: {}", t.state, t.action, v + 0.0);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementCheck {
    pub id: String,
    pub description: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementReport {
    pub checks: Vec<RequirementCheck>,
    pub satisfied: bool,
}

impl RequirementReport {
    pub fn check(&self, id: &str) -> Option<&RequirementCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.id.as_str())
            .collect()
    }
}

/// Checks parsed output against the workflow with the discount factor fixed:
/// the path must reach the optimal discounted return.
pub fn check_requirements(
    parsed: &ParsedResult,
    spec: &WorkflowSpec,
    oracle: &QTable,
) -> RequirementReport {
    check_requirements_in_mode(parsed, spec, oracle, GammaMode::Fixed(spec.gamma))
}

/// As [`check_requirements`]. With an unspecified gamma the model may pick
/// its own discount, so the path must instead match the oracle's greedy
/// state sequence.
pub fn check_requirements_in_mode(
    parsed: &ParsedResult,
    spec: &WorkflowSpec,
    oracle: &QTable,
    mode: GammaMode,
) -> RequirementReport {
    let path = &parsed.optimal_path;
    let mut checks = Vec::with_capacity(6);
    let mut push = |id: &str, description: &str, passed: bool, detail: String| {
        checks.push(RequirementCheck {
            id: id.to_owned(),
            description: description.to_owned(),
            passed,
            detail,
        })
    };

    push(
        "R1",
        "an optimal episode is listed",
        !path.is_empty(),
        if path.is_empty() {
            "no path found in the output".to_owned()
        } else {
            format!("path with {} states", path.len())
        },
    );

    let starts = path.first() == Some(&spec.start);
    let ends = path.last() == Some(&spec.terminal);
    push(
        "R2",
        "the episode begins at the start state and finishes at the terminal state",
        starts && ends,
        format!(
            "begins at {}, ends at {}",
            path.first().map_or("-", StateId::as_str),
            path.last().map_or("-", StateId::as_str)
        ),
    );

    let invalid_hops: Vec<String> = path
        .windows(2)
        .filter(|hop| !spec.is_valid_pair(&hop[0], &hop[1]))
        .map(|hop| format!("{} -> {}", hop[0], hop[1]))
        .collect();
    push(
        "R3",
        "every transition is an allowed action",
        !path.is_empty() && invalid_hops.is_empty(),
        if invalid_hops.is_empty() {
            "all hops valid".to_owned()
        } else {
            format!("invalid: {}", invalid_hops.join(", "))
        },
    );

    let steps = path.len().saturating_sub(1) as u64;
    push(
        "R4",
        "the episode stays within the step cap",
        steps <= spec.training.max_steps,
        format!("{steps} steps (cap {})", spec.training.max_steps),
    );

    let invalid_pairs: Vec<String> = parsed
        .q_entries
        .iter()
        .filter(|e| !spec.is_valid_pair(&e.state, &e.action))
        .map(|e| format!("{} -> {}", e.state, e.action))
        .collect();
    push(
        "R5",
        "a Q-table is reported over valid state/action pairs only",
        !parsed.q_entries.is_empty() && invalid_pairs.is_empty(),
        if parsed.q_entries.is_empty() {
            "no Q-table entries".to_owned()
        } else if invalid_pairs.is_empty() {
            format!("{} entries", parsed.q_entries.len())
        } else {
            format!("invalid pairs: {}", invalid_pairs.join(", "))
        },
    );

    let (passed, detail) = optimality(parsed, spec, oracle, mode);
    push("R6", "the episode is return-optimal", passed, detail);

    let satisfied = checks.iter().all(|c| c.passed);
    RequirementReport { checks, satisfied }
}

fn optimality(
    parsed: &ParsedResult,
    spec: &WorkflowSpec,
    oracle: &QTable,
    mode: GammaMode,
) -> (bool, String) {
    let best = match greedy_episode(spec, oracle) {
        Ok(ep) if ep.terminated_by == crate::mdp::Termination::ReachedTerminal => ep,
        _ => return (false, "oracle has no path to the terminal state".to_owned()),
    };
    let best_return = discounted_return(&best, spec.gamma);
    let episode = match spec.episode_from_path(&parsed.optimal_path) {
        Ok(ep) if !parsed.optimal_path.is_empty() => ep,
        _ => return (false, "path is not a valid episode".to_owned()),
    };
    if parsed.optimal_path.last() != Some(&spec.terminal) {
        return (false, "path does not reach the terminal state".to_owned());
    }
    let got = discounted_return(&episode, spec.gamma);
    match mode {
        GammaMode::Fixed(_) => {
            let delta = (got - best_return).abs();
            (
                delta <= RETURN_TOLERANCE,
                format!("return {got:.5} vs optimal {best_return:.5}"),
            )
        }
        GammaMode::Unspecified => {
            let same = parsed.optimal_path == best.path();
            (
                same,
                if same {
                    "matches the optimal state sequence".to_owned()
                } else {
                    format!("differs from the optimal state sequence (return {got:.5} vs {best_return:.5})")
                },
            )
        }
    }
}

/// Discounted return of the parsed path under the workflow's gamma, when the
/// path is a valid episode.
pub fn path_return(parsed: &ParsedResult, spec: &WorkflowSpec) -> Option<f64> {
    if parsed.optimal_path.len() < 2 {
        return None;
    }
    spec.episode_from_path(&parsed.optimal_path)
        .ok()
        .map(|ep| discounted_return(&ep, spec.gamma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QDelta {
    pub state: StateId,
    pub action: StateId,
    pub reported: f64,
    pub oracle: f64,
    pub delta: f64,
    pub flagged: bool,
}

/// Compares every reported entry on a valid pair with the oracle value.
pub fn verify_against_oracle(parsed: &ParsedResult, oracle: &QTable, tol: f64) -> Vec<QDelta> {
    parsed
        .q_entries
        .iter()
        .filter_map(|e| {
            let truth = oracle.get(&e.state, &e.action)?;
            let delta = (e.value - truth).abs();
            Some(QDelta {
                state: e.state.clone(),
                action: e.action.clone(),
                reported: e.value,
                oracle: truth,
                delta,
                flagged: delta > tol,
            })
        })
        .collect()
}
