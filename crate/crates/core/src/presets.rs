//! Bundled system descriptions.
//!
//! `table1` and `prototype` are the files shipped in `configs/`; the others
//! are small fixtures for rigid-payload and coupled-cable code paths.

use crate::error::Result;
use crate::model::{parse_system, SystemDescription};

/// Text of `configs/table1.sys`.
pub const TABLE1_SYS: &str = include_str!("../../../configs/table1.sys");
/// Text of `configs/prototype.sys`.
pub const PROTOTYPE_SYS: &str = include_str!("../../../configs/prototype.sys");
/// Text of `configs/resize_hover.scn`.
pub const RESIZE_HOVER_SCN: &str = include_str!("../../../configs/resize_hover.scn");

const QUAD: &str = r#"
mass = "1.05 kg"
com = "[0, 0, -2] cm"
inertia = [0.0123, 0.0123, 0.0224]
arm_length = "0.2 m"
k_f = 3.55e-6
k_m = 5.4e-8
thrust_max = "4.5 N"
"#;

const WINCH: &str = r#"
mass = "150 g"
drum_radius = "2 cm"
inertia = [1e-5, 6e-6, 6e-6]
stall_torque = "6 kgcm"
max_rate = "20 rad/s"
"#;

pub fn table1_text() -> String {
    TABLE1_SYS.to_string()
}

/// Three quadrotors, three winches and a 1 kg point mass.
pub fn table1() -> Result<SystemDescription> {
    parse_system(TABLE1_SYS)
}

/// The experimental prototype: 670 g point mass, exits at `[0, 0, −6.4]` cm.
pub fn prototype() -> Result<SystemDescription> {
    parse_system(PROTOTYPE_SYS)
}

/// Three cables on a rigid payload with distinct attachment points.
pub fn rigid_payload() -> Result<SystemDescription> {
    let mut text = String::from(
        "point_mass = false\n\n[payload]\nmass = \"1 kg\"\ncom = [0.01, -0.02, 0.0]\n\
         inertia = [0.02, 0.025, 0.035]\n\
         attachments = [[0.15, 0.0, 0.02], [-0.075, 0.13, 0.0], [-0.075, -0.13, -0.01]]\n",
    );
    text.push_str("\n[[quadrotor]]\ncount = 3");
    text.push_str(QUAD);
    for j in 0..3 {
        text.push_str(&format!(
            "\n[[winch]]\nowner = {j}\nmount_translation = \"[0, 0, -2] cm\"\nexit_point = \"[2, 2, 0] cm\"{WINCH}"
        ));
    }
    text.push_str(
        "\n[configuration]\nazimuths = \"[0, 120, -120] deg\"\ninclinations = \"[30, 30, 30] deg\"\nlengths = [1.4, 1.4, 1.4]\n",
    );
    parse_system(&text)
}

/// Three quadrotors with two winches each on a rigid payload (m = 6).
pub fn rigid_six() -> Result<SystemDescription> {
    let mut text =
        String::from("point_mass = false\n\n[payload]\nmass = \"1 kg\"\ninertia = [0.02, 0.02, 0.03]\nattachments = [");
    let r = 0.15;
    let mut pts = Vec::new();
    for j in 0..3 {
        for k in 0..2 {
            let a = (120.0 * j as f64 + if k == 0 { -20.0 } else { 20.0 }).to_radians();
            pts.push(format!("[{:.12}, {:.12}, 0.0]", r * a.cos(), r * a.sin()));
        }
    }
    text.push_str(&pts.join(", "));
    text.push_str("]\n\n[[quadrotor]]\ncount = 3");
    text.push_str(QUAD);
    for j in 0..3 {
        for y in ["-6", "6"] {
            text.push_str(&format!(
                "\n[[winch]]\nowner = {j}\nmount_translation = \"[0, {y}, -2] cm\"\nexit_point = \"[2, 2, 0] cm\"{WINCH}"
            ));
        }
    }
    parse_system(&text)
}

/// Two quadrotors, the second carrying two winches (s = [1, 2]).
pub fn coupled_pair() -> Result<SystemDescription> {
    let mut text = String::from("point_mass = true\n\n[payload]\nmass = \"1 kg\"\nattachments = 3\n");
    text.push_str("\n[[quadrotor]]\ncount = 2");
    text.push_str(QUAD);
    for (owner, y) in [(0, "0"), (1, "-5"), (1, "5")] {
        text.push_str(&format!(
            "\n[[winch]]\nowner = {owner}\nmount_translation = \"[0, {y}, -2] cm\"\nexit_point = \"[2, 2, 0] cm\"{WINCH}"
        ));
    }
    parse_system(&text)
}
