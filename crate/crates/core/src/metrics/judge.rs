//! Pairwise judge protocol: which of two videos is worse under a named
//! criterion. Replies are parsed strictly (a single letter or nothing);
//! anything else is an invalid verdict that gets counted and excluded.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toyworld::Video;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Criterion {
    /// Text alignment.
    TA,
    /// Subject consistency.
    SC,
    /// Motion smoothness.
    MS,
    /// First-frame distortion (single-image comparison).
    FF,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Criterion::TA, Criterion::SC, Criterion::MS, Criterion::FF];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::TA => "TA",
            Criterion::SC => "SC",
            Criterion::MS => "MS",
            Criterion::FF => "FF",
        }
    }

    /// The evaluation prompt sent to the judge for this criterion.
    pub fn prompt(self) -> &'static str {
        match self {
            Criterion::TA => {
                "You are an expert video quality evaluator.\n\
                 You will see two short videos: Video A and Video B.\n\n\
                 The videos were generated from the same text description.\n\
                 Decide which video less matches the text description - i.e., worse \
                 alignment with the described actions, subject behaviour, and overall \
                 semantics.\n\n\
                 Reply with only the single letter A or B."
            }
            Criterion::SC => {
                "You are an expert video quality evaluator.\n\
                 You will see two short videos: Video A and Video B.\n\n\
                 Decide which video has less consistent subject across frames - e.g., \
                 more flickering, morphing, identity drift, or distortion of the main \
                 subject.\n\n\
                 Reply with only the single letter A or B."
            }
            Criterion::MS => {
                "You are an expert video quality evaluator.\n\
                 You will see two short videos: Video A and Video B.\n\n\
                 Decide which video has less natural motion - e.g., jitter, unnatural \
                 trajectories, sudden jumps, or physically implausible movement.\n\n\
                 Reply with only the single letter A or B."
            }
            Criterion::FF => {
                "You are an expert image quality assessor.\n\
                 You are shown two images: Image A and Image B. Both are the first \
                 frames of videos generated from the same source photograph.\n\n\
                 Decide which image is more distorted - e.g., more visual artifacts, \
                 noise, identity distortion, or less natural appearance.\n\n\
                 Reply with only the single letter A or B."
            }
        }
    }
}

/// Which side of the pair a sample was shown on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    A,
    B,
}

/// A fully-assembled judging request.
#[derive(Debug, Clone)]
pub struct JudgeRequest {
    pub criterion: Criterion,
    pub prompt: String,
    /// PNG-encoded frames of item A (one frame for FF).
    pub frames_a: Vec<Vec<u8>>,
    pub frames_b: Vec<Vec<u8>>,
    pub pair_id: String,
}

/// A judge's reply to one pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub criterion: Criterion,
    /// Which item was judged worse; `None` for replies that failed the
    /// strict single-letter parse.
    pub worse: Option<Slot>,
    pub raw_response: String,
    pub pair_id: String,
}

impl JudgeVerdict {
    pub fn is_valid(&self) -> bool {
        self.worse.is_some()
    }
}

/// Transport to a judging model.
pub trait JudgeBackend {
    /// Return the raw textual reply.
    fn judge(&self, request: &JudgeRequest) -> Result<String>;
}

/// Strict reply parsing: exactly the letter, nothing else.
pub fn parse_reply(raw: &str) -> Option<Slot> {
    match raw.trim() {
        "A" => Some(Slot::A),
        "B" => Some(Slot::B),
        _ => None,
    }
}

fn encode_frames(video: &Video, first_only: bool) -> Result<Vec<Vec<u8>>> {
    let count = if first_only { 1 } else { video.frames() };
    let mut out = Vec::with_capacity(count);
    for t in 0..count {
        let frame = video.frame(t);
        let (h, w) = (frame.shape()[1], frame.shape()[2]);
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = [
                    (frame[[0, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (frame[[1, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8,
                    (frame[[2, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8,
                ];
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        let mut bytes = std::io::Cursor::new(Vec::new());
        img.write_to(&mut bytes, image::ImageFormat::Png)
            .map_err(|e| Error::Judge(format!("frame encode: {e}")))?;
        out.push(bytes.into_inner());
    }
    Ok(out)
}

/// Ask the backend which of two videos is worse under a criterion. The FF
/// criterion compares first frames only.
pub fn judge_pair(
    video_a: &Video,
    video_b: &Video,
    criterion: Criterion,
    backend: &dyn JudgeBackend,
    pair_id: &str,
) -> Result<JudgeVerdict> {
    let first_only = criterion == Criterion::FF;
    let request = JudgeRequest {
        criterion,
        prompt: criterion.prompt().to_string(),
        frames_a: encode_frames(video_a, first_only)?,
        frames_b: encode_frames(video_b, first_only)?,
        pair_id: pair_id.to_string(),
    };
    let raw = backend.judge(&request)?;
    Ok(JudgeVerdict {
        criterion,
        worse: parse_reply(&raw),
        raw_response: raw,
        pair_id: pair_id.to_string(),
    })
}

/// Scripted in-process backend. Replies cycle through the script; requests
/// are recorded for inspection.
pub struct MockJudgeBackend {
    script: Vec<String>,
    cursor: std::cell::RefCell<usize>,
    pub requests: std::cell::RefCell<Vec<RecordedRequest>>,
}

/// What the mock retains about each call.
#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub criterion: Criterion,
    pub prompt: String,
    pub frames_a: usize,
    pub frames_b: usize,
    pub pair_id: String,
}

impl MockJudgeBackend {
    pub fn new(script: Vec<String>) -> Self {
        Self {
            script,
            cursor: std::cell::RefCell::new(0),
            requests: std::cell::RefCell::new(Vec::new()),
        }
    }

    pub fn always(reply: &str) -> Self {
        Self::new(vec![reply.to_string()])
    }
}

impl JudgeBackend for MockJudgeBackend {
    fn judge(&self, request: &JudgeRequest) -> Result<String> {
        self.requests.borrow_mut().push(RecordedRequest {
            criterion: request.criterion,
            prompt: request.prompt.clone(),
            frames_a: request.frames_a.len(),
            frames_b: request.frames_b.len(),
            pair_id: request.pair_id.clone(),
        });
        let mut cur = self.cursor.borrow_mut();
        let reply = self.script[*cur % self.script.len()].clone();
        *cur += 1;
        Ok(reply)
    }
}

/// Minimal HTTP transport: POSTs the prompt plus base64 PNG frames as JSON
/// and expects `{"reply": "..."}` back. Auth token comes from the named
/// environment variable. Retries transport failures with a bounded budget.
pub struct HttpJudgeBackend {
    pub endpoint: String,
    pub model: String,
    pub auth_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
}

impl JudgeBackend for HttpJudgeBackend {
    fn judge(&self, request: &JudgeRequest) -> Result<String> {
        use base64_encode as b64;
        let payload = serde_json::json!({
            "model": self.model,
            "prompt": request.prompt,
            "criterion": request.criterion.name(),
            "pair_id": request.pair_id,
            "frames_a": request.frames_a.iter().map(|f| b64(f)).collect::<Vec<_>>(),
            "frames_b": request.frames_b.iter().map(|f| b64(f)).collect::<Vec<_>>(),
        });
        let token = std::env::var(&self.auth_env).unwrap_or_default();
        let mut last_err = None;
        for _ in 0..=self.max_retries {
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(std::time::Duration::from_secs(self.timeout_secs)))
                .build()
                .into();
            let result = agent
                .post(&self.endpoint)
                .header("authorization", &format!("Bearer {token}"))
                .send_json(&payload);
            match result {
                Ok(mut resp) => {
                    let body: serde_json::Value = resp
                        .body_mut()
                        .read_json()
                        .map_err(|e| Error::Judge(format!("bad response body: {e}")))?;
                    return body
                        .get("reply")
                        .and_then(|v| v.as_str())
                        .map(|s| s.to_string())
                        .ok_or_else(|| Error::Judge("response missing 'reply'".into()));
                }
                Err(e) => last_err = Some(e),
            }
        }
        Err(Error::Judge(format!(
            "backend unreachable after {} retries: {}",
            self.max_retries,
            last_err.map(|e| e.to_string()).unwrap_or_default()
        )))
    }
}

fn base64_encode(bytes: &[u8]) -> String {
    const TABLE: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    let mut out = String::with_capacity(bytes.len().div_ceil(3) * 4);
    for chunk in bytes.chunks(3) {
        let b = [
            chunk[0],
            chunk.get(1).copied().unwrap_or(0),
            chunk.get(2).copied().unwrap_or(0),
        ];
        let n = ((b[0] as u32) << 16) | ((b[1] as u32) << 8) | b[2] as u32;
        out.push(TABLE[(n >> 18) as usize & 63] as char);
        out.push(TABLE[(n >> 12) as usize & 63] as char);
        out.push(if chunk.len() > 1 {
            TABLE[(n >> 6) as usize & 63] as char
        } else {
            '='
        });
        out.push(if chunk.len() > 2 {
            TABLE[n as usize & 63] as char
        } else {
            '='
        });
    }
    out
}

/// One judged pair with its ordering bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairOutcome {
    pub baseline: String,
    pub criterion: Criterion,
    pub scene_id: String,
    /// Which slot held our (immunized) sample.
    pub ours_was: Slot,
    pub verdict: JudgeVerdict,
}

/// Win-rate aggregation per `(baseline, criterion)` cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WinRateCell {
    /// Percentage of valid verdicts where our sample was judged worse;
    /// `None` when the cell has no valid verdicts.
    pub ours_worse_pct: Option<f64>,
    pub valid: usize,
    pub invalid: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WinRateTable {
    pub cells: BTreeMap<String, WinRateCell>,
}

impl WinRateTable {
    pub fn key(baseline: &str, criterion: Criterion) -> String {
        format!("{baseline}/{}", criterion.name())
    }

    pub fn cell(&self, baseline: &str, criterion: Criterion) -> Option<&WinRateCell> {
        self.cells.get(&Self::key(baseline, criterion))
    }
}

/// Aggregate verdicts: the percentage of scenes where our output was judged
/// worse, per baseline and criterion. Invalid verdicts are excluded from
/// the percentage and reported separately.
pub fn winrate_table(outcomes: &[PairOutcome]) -> WinRateTable {
    let mut acc: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for o in outcomes {
        let key = WinRateTable::key(&o.baseline, o.criterion);
        let entry = acc.entry(key).or_insert((0, 0, 0));
        match o.verdict.worse {
            Some(w) => {
                entry.0 += 1;
                if w == o.ours_was {
                    entry.1 += 1;
                }
            }
            None => entry.2 += 1,
        }
    }
    WinRateTable {
        cells: acc
            .into_iter()
            .map(|(k, (valid, worse, invalid))| {
                (
                    k,
                    WinRateCell {
                        ours_worse_pct: (valid > 0)
                            .then(|| 100.0 * worse as f64 / valid as f64),
                        valid,
                        invalid,
                    },
                )
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    fn video(value: f64) -> Video {
        Video::new(ArrayD::from_elem(IxDyn(&[3, 3, 16, 16]), value))
    }

    fn verdict(worse: Option<Slot>) -> JudgeVerdict {
        JudgeVerdict {
            criterion: Criterion::TA,
            worse,
            raw_response: String::new(),
            pair_id: "p".into(),
        }
    }

    #[test]
    fn scripted_a_parses_as_a() {
        let backend = MockJudgeBackend::always("A");
        let v = judge_pair(&video(0.2), &video(0.8), Criterion::SC, &backend, "x").unwrap();
        assert_eq!(v.worse, Some(Slot::A));
        assert!(v.is_valid());
    }

    #[test]
    fn verbose_reply_is_invalid() {
        let backend = MockJudgeBackend::always("The answer is A");
        let v = judge_pair(&video(0.2), &video(0.8), Criterion::TA, &backend, "x").unwrap();
        assert_eq!(v.worse, None);
        assert!(!v.is_valid());
        assert_eq!(v.raw_response, "The answer is A");
    }

    #[test]
    fn whitespace_only_trim_is_allowed() {
        assert_eq!(parse_reply(" A \n"), Some(Slot::A));
        assert_eq!(parse_reply("B"), Some(Slot::B));
        assert_eq!(parse_reply("a"), None);
        assert_eq!(parse_reply("AB"), None);
        assert_eq!(parse_reply(""), None);
    }

    #[test]
    fn ff_sends_first_frames_only() {
        let backend = MockJudgeBackend::always("B");
        judge_pair(&video(0.1), &video(0.9), Criterion::FF, &backend, "ff").unwrap();
        judge_pair(&video(0.1), &video(0.9), Criterion::MS, &backend, "ms").unwrap();
        let reqs = backend.requests.borrow();
        assert_eq!(reqs[0].frames_a, 1, "FF is a single-image comparison");
        assert_eq!(reqs[0].frames_b, 1);
        assert_eq!(reqs[1].frames_a, 3, "video criteria send all frames");
    }

    #[test]
    fn prompts_demand_a_single_letter() {
        for c in Criterion::ALL {
            assert!(c.prompt().contains("single letter"), "{c:?}");
        }
        assert!(Criterion::TA.prompt().contains("less matches"));
        assert!(Criterion::SC.prompt().contains("less consistent subject"));
        assert!(Criterion::MS.prompt().contains("less natural motion"));
        assert!(Criterion::FF.prompt().contains("more distorted"));
    }

    #[test]
    fn winrate_all_ours_worse_is_100() {
        let outcomes: Vec<PairOutcome> = (0..3)
            .map(|i| PairOutcome {
                baseline: "clean".into(),
                criterion: Criterion::TA,
                scene_id: format!("s{i}"),
                ours_was: Slot::A,
                verdict: verdict(Some(Slot::A)),
            })
            .collect();
        let table = winrate_table(&outcomes);
        let cell = table.cell("clean", Criterion::TA).unwrap();
        assert_eq!(cell.ours_worse_pct, Some(100.0));
        assert_eq!(cell.valid, 3);
        assert_eq!(cell.invalid, 0);
    }

    #[test]
    fn winrate_none_ours_worse_is_0() {
        let outcomes: Vec<PairOutcome> = (0..3)
            .map(|i| PairOutcome {
                baseline: "clean".into(),
                criterion: Criterion::TA,
                scene_id: format!("s{i}"),
                ours_was: Slot::B,
                verdict: verdict(Some(Slot::A)),
            })
            .collect();
        let table = winrate_table(&outcomes);
        assert_eq!(
            table.cell("clean", Criterion::TA).unwrap().ours_worse_pct,
            Some(0.0)
        );
    }

    #[test]
    fn invalid_verdicts_are_excluded_and_counted() {
        let mut outcomes: Vec<PairOutcome> = (0..2)
            .map(|i| PairOutcome {
                baseline: "rand".into(),
                criterion: Criterion::MS,
                scene_id: format!("s{i}"),
                ours_was: Slot::A,
                verdict: verdict(Some(Slot::A)),
            })
            .collect();
        outcomes.push(PairOutcome {
            baseline: "rand".into(),
            criterion: Criterion::MS,
            scene_id: "s2".into(),
            ours_was: Slot::A,
            verdict: verdict(None),
        });
        let table = winrate_table(&outcomes);
        let cell = table.cell("rand", Criterion::MS).unwrap();
        assert_eq!(cell.valid, 2);
        assert_eq!(cell.invalid, 1);
        assert_eq!(cell.ours_worse_pct, Some(100.0));
    }

    #[test]
    fn empty_cell_is_na() {
        let outcomes = vec![PairOutcome {
            baseline: "clean".into(),
            criterion: Criterion::FF,
            scene_id: "s".into(),
            ours_was: Slot::A,
            verdict: verdict(None),
        }];
        let table = winrate_table(&outcomes);
        let cell = table.cell("clean", Criterion::FF).unwrap();
        assert_eq!(cell.ours_worse_pct, None);
    }

    #[test]
    fn complement_sums_to_100_when_all_valid() {
        let mut rngish = 0u64;
        let outcomes: Vec<PairOutcome> = (0..40)
            .map(|i| {
                rngish = rngish.wrapping_mul(6364136223846793005).wrapping_add(1);
                let ours = if rngish >> 63 == 0 { Slot::A } else { Slot::B };
                rngish = rngish.wrapping_mul(6364136223846793005).wrapping_add(1);
                let worse = if rngish >> 63 == 0 { Slot::A } else { Slot::B };
                PairOutcome {
                    baseline: "pg".into(),
                    criterion: Criterion::SC,
                    scene_id: format!("s{i}"),
                    ours_was: ours,
                    verdict: verdict(Some(worse)),
                }
            })
            .collect();
        let ours_worse = winrate_table(&outcomes)
            .cell("pg", Criterion::SC)
            .unwrap()
            .ours_worse_pct
            .unwrap();
        // flip the assignment: the complementary table
        let flipped: Vec<PairOutcome> = outcomes
            .iter()
            .cloned()
            .map(|mut o| {
                o.ours_was = match o.ours_was {
                    Slot::A => Slot::B,
                    Slot::B => Slot::A,
                };
                o
            })
            .collect();
        let baseline_worse = winrate_table(&flipped)
            .cell("pg", Criterion::SC)
            .unwrap()
            .ours_worse_pct
            .unwrap();
        assert!((ours_worse + baseline_worse - 100.0).abs() < 1e-9);
    }
}
