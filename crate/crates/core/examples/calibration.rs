//! Calibrate one game's reward range: a random frozen agent sets the floor,
//! an agent with a game-specific encoder sets the ceiling.

use dell::benchmark::Genre;
use dell::encoder::random_encoder;
use dell::suite::{calibrate_max_reward, calibrate_min_reward, CalibrationConfig, RenderConfig, SyntheticGame};

fn main() -> dell::Result<()> {
    let game = SyntheticGame::new("calib", Genre::Platformer, 11, RenderConfig::default());
    let cfg = CalibrationConfig { budget: 60, ae_epochs: 3, ..CalibrationConfig::default() };
    let min = calibrate_min_reward(&game, &random_encoder(0), cfg.min_episodes, 0)?;
    let max = calibrate_max_reward(&game, cfg.budget, 0, &cfg)?;
    println!("min reward {min:.1}");
    println!("max reward {:.1} (plateaued: {})", max.value, max.plateaued);
    println!("analytic optimum {:.1}", game.analytic_optimum_return(4096, 0));
    Ok(())
}
