//! Deterministic synthetic multi-view driving scenes.
//!
//! The world frame is the ego frame at frame 0 (x forward, y left, z up).
//! The ego advances `ego_velocity` meters along its heading and turns by
//! `ego_yaw_rate` radians per frame. Objects follow
//! `p(t) = p₀ + v t + ½ a t²`, with `t` counted from their `appear` frame, and
//! exist for frames `appear ≤ frame < vanish`.
//!
//! `num_views` pinhole cameras sit at the ego origin with yaws
//! `2π k / num_views` (view 0 looks forward, views proceed counter-clockwise).
//! The focal length defaults to `0.5 · width / tan(35°)`. Objects are drawn as
//! textured, axis-aligned rectangles in far-to-near order over seeded
//! low-amplitude background noise.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{horizontal_depth, RigidTransform, Vec3};
use crate::image::Image;
use crate::kv;
use crate::rng;

/// Objects closer than this along a camera axis are culled for that view.
pub const NEAR_PLANE: f64 = 0.5;

const BACKGROUND_LEVEL: f64 = 0.35;
const BACKGROUND_AMPLITUDE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    /// Width and height in meters.
    pub size: [f64; 2],
    pub texture: u32,
    pub appear: usize,
    pub vanish: Option<usize>,
}

impl ObjectSpec {
    pub fn world_position(&self, frame: usize) -> Vec3 {
        let t = frame.saturating_sub(self.appear) as f64;
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = self.position[k] + self.velocity[k] * t + 0.5 * self.acceleration[k] * t * t;
        }
        p
    }

    pub fn present(&self, frame: usize) -> bool {
        frame >= self.appear && self.vanish.map_or(true, |v| frame < v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub name: String,
    pub num_views: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub focal: Option<f64>,
    pub objects: Vec<ObjectSpec>,
    /// Meters per frame along the ego heading.
    pub ego_velocity: f64,
    /// Radians per frame.
    pub ego_yaw_rate: f64,
    pub num_frames: usize,
    pub seed: u64,
    pub depth_max: f64,
}

/// Ground truth and images for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub frame: usize,
    pub images: Vec<Image>,
    pub object_positions: Vec<Vec3>,
    pub object_depths: Vec<f64>,
    /// Pose of this frame's ego frame in the previous one (identity at frame 0).
    pub ego_motion: RigidTransform,
}

impl ScenarioScript {
    pub fn focal_px(&self) -> f64 {
        self.focal
            .unwrap_or_else(|| 0.5 * self.image_w as f64 / 35f64.to_radians().tan())
    }

    pub fn view_yaw(&self, view: usize) -> f64 {
        std::f64::consts::TAU * view as f64 / self.num_views as f64
    }

    pub fn with_resolution(mut self, image_h: usize, image_w: usize) -> Self {
        self.image_h = image_h;
        self.image_w = image_w;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_views == 0 {
            return Err(Error::config("views", "must be positive"));
        }
        if self.image_h == 0 || self.image_w == 0 || self.channels == 0 {
            return Err(Error::config("resolution", "dimensions and channels must be positive"));
        }
        if self.num_frames == 0 {
            return Err(Error::config("frames", "must be positive"));
        }
        if !(self.depth_max > 0.0) {
            return Err(Error::config("depth_max", "must be positive"));
        }
        if let Some(f) = self.focal {
            if !(f > 0.0) {
                return Err(Error::config("focal", "must be positive"));
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            let d = horizontal_depth(o.position);
            if !(0.0..=self.depth_max).contains(&d) {
                return Err(Error::config(
                    format!("object[{i}]"),
                    format!("starts {d:.2} m from the ego, outside [0, {}]", self.depth_max),
                ));
            }
            if !(o.size[0] > 0.0 && o.size[1] > 0.0) {
                return Err(Error::config(format!("object[{i}]"), "size must be positive"));
            }
            if o.vanish.is_some_and(|v| v <= o.appear) {
                return Err(Error::config(format!("object[{i}]"), "vanishes before it appears"));
            }
        }
        Ok(())
    }

    /// Ego heading and position in the world frame at `frame`.
    pub fn ego_pose(&self, frame: usize) -> (f64, [f64; 2]) {
        let mut pos = [0.0, 0.0];
        for k in 0..frame {
            let yaw = self.ego_yaw_rate * k as f64;
            pos[0] += self.ego_velocity * yaw.cos();
            pos[1] += self.ego_velocity * yaw.sin();
        }
        (self.ego_yaw_rate * frame as f64, pos)
    }

    pub fn ego_motion(&self, frame: usize) -> RigidTransform {
        if frame == 0 {
            RigidTransform::identity()
        } else {
            RigidTransform::from_yaw_translation(self.ego_yaw_rate, [self.ego_velocity, 0.0, 0.0])
        }
    }

    /// Ego-frame positions of the objects present at `frame`, in script order.
    pub fn object_positions(&self, frame: usize) -> Vec<(usize, Vec3)> {
        let (yaw, pos) = self.ego_pose(frame);
        let (s, c) = yaw.sin_cos();
        self.objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.present(frame))
            .map(|(i, o)| {
                let w = o.world_position(frame);
                let (dx, dy) = (w[0] - pos[0], w[1] - pos[1]);
                (i, [c * dx + s * dy, -s * dx + c * dy, w[2]])
            })
            .collect()
    }

    /// Mean ground-truth depth at `frame` (meters), if any object is present.
    pub fn mean_depth(&self, frame: usize) -> Option<f64> {
        let pos = self.object_positions(frame);
        if pos.is_empty() {
            None
        } else {
            Some(pos.iter().map(|(_, p)| horizontal_depth(*p)).sum::<f64>() / pos.len() as f64)
        }
    }

    /// Text form accepted by [`ScenarioScript::parse`].
    pub fn to_text(&self) -> String {
        let f = kv::fmt_f64;
        let mut out = format!(
            "name = {}\nviews = {}\nheight = {}\nwidth = {}\nchannels = {}\n",
            self.name, self.num_views, self.image_h, self.image_w, self.channels
        );
        if let Some(focal) = self.focal {
            out += &format!("focal = {}\n", f(focal));
        }
        out += &format!(
            "frames = {}\nseed = {}\ndepth_max = {}\nego_velocity = {}\nego_yaw_rate = {}\n",
            self.num_frames,
            self.seed,
            f(self.depth_max),
            f(self.ego_velocity),
            f(self.ego_yaw_rate)
        );
        for o in &self.objects {
            let nums: Vec<String> = o
                .position
                .iter()
                .chain(&o.velocity)
                .chain(&o.acceleration)
                .chain(&o.size)
                .map(|&v| f(v))
                .collect();
            out += &format!("object = {} {} {}", nums.join(" "), o.texture, o.appear);
            if let Some(v) = o.vanish {
                out += &format!(" {v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses a scenario from `key = value` lines.
    ///
    /// ```text
    /// name = receding
    /// views = 6
    /// height = 160
    /// width = 400
    /// channels = 1
    /// focal = 285.6            # optional
    /// frames = 20
    /// seed = 7
    /// depth_max = 61.2
    /// ego_velocity = 0.0
    /// ego_yaw_rate = 0.0
    /// # x y z  vx vy vz  ax ay az  width height  texture [appear [vanish]]
    /// object = 40 0 0  0.5 0 0  0.04 0 0  2 1.6  0
    /// ```
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut s = ScenarioScript {
            name: String::new(),
            num_views: 6,
            image_h: 160,
            image_w: 400,
            channels: 1,
            focal: None,
            objects: Vec::new(),
            ego_velocity: 0.0,
            ego_yaw_rate: 0.0,
            num_frames: 0,
            seed: 0,
            depth_max: crate::spss::DEFAULT_DEPTH_MAX,
        };
        for e in kv::parse(text, origin)? {
            match e.key.as_str() {
                "name" => s.name = e.value.clone(),
                "views" => s.num_views = e.parse(origin)?,
                "height" => s.image_h = e.parse(origin)?,
                "width" => s.image_w = e.parse(origin)?,
                "channels" => s.channels = e.parse(origin)?,
                "focal" => s.focal = Some(e.parse(origin)?),
                "frames" => s.num_frames = e.parse(origin)?,
                "seed" => s.seed = e.parse(origin)?,
                "depth_max" => s.depth_max = e.parse(origin)?,
                "ego_velocity" => s.ego_velocity = e.parse(origin)?,
                "ego_yaw_rate" => s.ego_yaw_rate = e.parse(origin)?,
                "object" => {
                    let toks: Vec<&str> = e.value.split_whitespace().collect();
                    if !(12..=14).contains(&toks.len()) {
                        return Err(Error::Parse {
                            path: origin.to_string(),
                            line: e.line,
                            reason: format!("object needs 12 to 14 fields, found {}", toks.len()),
                        });
                    }
                    let bad = |t: &str| Error::Parse {
                        path: origin.to_string(),
                        line: e.line,
                        reason: format!("invalid object field {t:?}"),
                    };
                    let num = |i: usize| toks[i].parse::<f64>().map_err(|_| bad(toks[i]));
                    let int = |i: usize| toks[i].parse::<usize>().map_err(|_| bad(toks[i]));
                    s.objects.push(ObjectSpec {
                        position: [num(0)?, num(1)?, num(2)?],
                        velocity: [num(3)?, num(4)?, num(5)?],
                        acceleration: [num(6)?, num(7)?, num(8)?],
                        size: [num(9)?, num(10)?],
                        texture: toks[11].parse().map_err(|_| bad(toks[11]))?,
                        appear: if toks.len() > 12 { int(12)? } else { 0 },
                        vanish: if toks.len() > 13 { Some(int(13)?) } else { None },
                    });
                }
                _ => return Err(e.unknown(origin)),
            }
        }
        if s.name.is_empty() {
            s.name = origin.to_string();
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

fn texture_value(texture: u32, u: usize, v: usize, cell: usize) -> f64 {
    let (a, b) = (u / cell, v / cell);
    let on = match texture % 4 {
        0 => (a + b) % 2 == 0,
        1 => b % 2 == 0,
        2 => a % 2 == 0,
        _ => ((u + v) / cell) % 2 == 0,
    };
    if on {
        0.9
    } else {
        0.1
    }
}

/// Camera-frame coordinates (right, down, forward) of an ego-frame point.
fn to_camera(p: Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    let forward = c * p[0] + s * p[1];
    let right = s * p[0] - c * p[1];
    [right, -p[2], forward]
}

/// Pixel-space rectangle `[top, bottom) × [left, right)` of an object, if it
/// lies in front of the camera.
pub fn project_box(
    script: &ScenarioScript,
    view: usize,
    center: Vec3,
    size: [f64; 2],
) -> Option<[f64; 4]> {
    let cam = to_camera(center, script.view_yaw(view));
    if cam[2] <= NEAR_PLANE {
        return None;
    }
    let f = script.focal_px();
    let u = script.image_w as f64 / 2.0 + f * cam[0] / cam[2];
    let v = script.image_h as f64 / 2.0 + f * cam[1] / cam[2];
    let hw = f * size[0] / 2.0 / cam[2];
    let hh = f * size[1] / 2.0 / cam[2];
    Some([v - hh, v + hh, u - hw, u + hw])
}

/// Renders frame `frame` of `script`. A pure function of its arguments.
pub fn render(script: &ScenarioScript, frame: usize) -> Result<FrameTruth> {
    if frame >= script.num_frames {
        return Err(Error::OutOfRange {
            op: "render",
            index: frame,
            len: script.num_frames,
        });
    }
    let present = script.object_positions(frame);
    let (h, w, ch) = (script.image_h, script.image_w, script.channels);

    let mut images = Vec::with_capacity(script.num_views);
    for view in 0..script.num_views {
        let mut noise = rng::stream(script.seed, &[frame as u64, view as u64, 0x6267]);
        let mut img = Image::from_fn(h, w, ch, |_, _, _| {
            BACKGROUND_LEVEL + BACKGROUND_AMPLITUDE * noise.gen_range(-1.0..1.0)
        });
        // painter's order: far to near along this camera's axis
        let mut boxes: Vec<(f64, usize, [f64; 4])> = present
            .iter()
            .filter_map(|&(i, p)| {
                let depth = to_camera(p, script.view_yaw(view))[2];
                project_box(script, view, p, script.objects[i].size).map(|b| (depth, i, b))
            })
            .collect();
        boxes.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, i, [top, bottom, left, right]) in boxes {
            let r0 = (top - 0.5).ceil().max(0.0) as usize;
            let r1 = ((bottom - 0.5).ceil().max(0.0) as usize).min(h);
            let c0 = (left - 0.5).ceil().max(0.0) as usize;
            let c1 = ((right - 0.5).ceil().max(0.0) as usize).min(w);
            let cell = (((bottom - top) / 6.0).round() as usize).max(1);
            let tex = script.objects[i].texture;
            let (oy, ox) = ((top - 0.5).ceil() as i64, (left - 0.5).ceil() as i64);
            for r in r0..r1 {
                for c in c0..c1 {
                    let (u, v) = ((c as i64 - ox).max(0) as usize, (r as i64 - oy).max(0) as usize);
                    let val = texture_value(tex, u, v, cell);
                    for k in 0..ch {
                        // slight per-channel tint keeps colour images non-degenerate
                        img.set(r, c, k, val * (1.0 - 0.1 * k as f64));
                    }
                }
            }
        }
        images.push(img);
    }

    Ok(FrameTruth {
        frame,
        images,
        object_depths: present.iter().map(|(_, p)| horizontal_depth(*p)).collect(),
        object_positions: present.into_iter().map(|(_, p)| p).collect(),
        ego_motion: script.ego_motion(frame),
    })
}

fn radial(bearing_deg: f64, range: f64, speed: f64, accel: f64, z: f64) -> (Vec3, Vec3, Vec3) {
    let (s, c) = bearing_deg.to_radians().sin_cos();
    (
        [range * c, range * s, z],
        [speed * c, speed * s, 0.0],
        [accel * c, accel * s, 0.0],
    )
}

fn object(
    bearing_deg: f64,
    range: f64,
    speed: f64,
    accel: f64,
    texture: u32,
    appear: usize,
    vanish: Option<usize>,
) -> ObjectSpec {
    let (position, velocity, acceleration) = radial(bearing_deg, range, speed, accel, 0.0);
    ObjectSpec {
        position,
        velocity,
        acceleration,
        size: [4.5, 3.0],
        texture,
        appear,
        vanish,
    }
}

fn base(name: &str, frames: usize, objects: Vec<ObjectSpec>) -> ScenarioScript {
    ScenarioScript {
        name: name.to_string(),
        num_views: 6,
        image_h: 160,
        image_w: 400,
        channels: 1,
        focal: None,
        objects,
        ego_velocity: 0.0,
        ego_yaw_rate: 0.0,
        num_frames: frames,
        seed: 7,
        depth_max: crate::spss::DEFAULT_DEPTH_MAX,
    }
}

/// The built-in scenario library.
///
/// * `receding`: far objects moving away with growing speed.
/// * `approaching`: objects closing in with growing speed, crossing the
///   default depth threshold mid-sequence.
/// * `turn-in`: the ego turns in place among near objects; far objects come
///   into the scene at frame 8.
/// * `static`: nothing moves.
/// * `mixed`: far receding traffic, then near approaching traffic, then far
///   receding traffic again (12 frames each).
pub fn scripted_scenarios() -> Vec<ScenarioScript> {
    let receding = base(
        "receding",
        20,
        vec![
            object(0.0, 40.0, 0.5, 0.04, 0, 0, None),
            object(90.0, 42.0, 0.5, 0.04, 1, 0, None),
            object(185.0, 41.0, 0.5, 0.04, 2, 0, None),
            object(-50.0, 39.0, 0.5, 0.04, 3, 0, None),
        ],
    );
    let approaching = base(
        "approaching",
        24,
        vec![
            object(5.0, 50.0, -0.5, -0.06, 0, 0, None),
            object(60.0, 51.0, -0.5, -0.06, 1, 0, None),
            object(170.0, 49.0, -0.5, -0.06, 2, 0, None),
            object(-120.0, 50.0, -0.5, -0.06, 3, 0, None),
        ],
    );
    let mut turn_in = base(
        "turn-in",
        20,
        vec![
            object(10.0, 15.0, 0.0, 0.0, 0, 0, None),
            object(-80.0, 16.0, 0.0, 0.0, 1, 0, None),
            object(30.0, 55.0, 0.0, 0.0, 2, 8, None),
            object(45.0, 56.0, 0.0, 0.0, 3, 8, None),
            object(60.0, 54.0, 0.0, 0.0, 0, 8, None),
            object(75.0, 55.0, 0.0, 0.0, 1, 8, None),
        ],
    );
    turn_in.ego_yaw_rate = 0.03;
    let stat = base(
        "static",
        16,
        vec![
            object(0.0, 20.0, 0.0, 0.0, 0, 0, None),
            object(120.0, 35.0, 0.0, 0.0, 1, 0, None),
            object(240.0, 50.0, 0.0, 0.0, 2, 0, None),
        ],
    );
    let mixed = base(
        "mixed",
        36,
        vec![
            object(0.0, 40.0, 0.5, 0.04, 0, 0, Some(12)),
            object(120.0, 41.0, 0.5, 0.04, 1, 0, Some(12)),
            object(240.0, 42.0, 0.5, 0.04, 2, 0, Some(12)),
            object(20.0, 25.0, -0.3, -0.02, 3, 12, Some(24)),
            object(140.0, 26.0, -0.3, -0.02, 0, 12, Some(24)),
            object(260.0, 24.0, -0.3, -0.02, 1, 12, Some(24)),
            object(-10.0, 45.0, 0.5, 0.04, 2, 24, None),
            object(110.0, 44.0, 0.5, 0.04, 3, 24, None),
            object(230.0, 46.0, 0.5, 0.04, 0, 24, None),
        ],
    );
    vec![receding, approaching, turn_in, stat, mixed]
}

pub fn scenario_by_name(name: &str) -> Option<ScenarioScript> {
    scripted_scenarios().into_iter().find(|s| s.name == name)
}
