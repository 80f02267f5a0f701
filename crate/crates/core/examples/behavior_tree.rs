//! Tick one agent's behavior tree by hand and print each node change.

use std::collections::BTreeSet;

use gallery_agents::behavior::{
    fresh_waypoint, tick_agent, AgentRuntime, BehaviorConfig, BehaviorNode, Intent, TickContext,
};
use gallery_agents::content::{fixtures, ContentPack};
use gallery_agents::world::Point;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let pack = ContentPack::from_json(fixtures::LION)?;
    let gallery = &pack.gallery;
    let config = BehaviorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = gallery.entrance();
    let target = fresh_waypoint(gallery, start, &mut rng).unwrap_or(start);
    let mut agent = AgentRuntime::new("agent-01", BehaviorNode::Patrol { target }, start);
    let (dt, speed) = (0.1, 1.2);
    let mut heading_to: Option<Point> = Some(target);

    for tick in 0..3000u32 {
        let now = f64::from(tick) * dt;
        let mut ctx = TickContext {
            now,
            dt,
            opportunity: tick % 10 == 0,
            user_in_greet_range: false,
            gallery,
            viewing_radius: 2.5,
            available_here: &BTreeSet::new(),
            script_offers: &[],
            config: &config,
            rng: &mut rng,
        };
        let (node, intents) = tick_agent(&agent, &mut ctx);
        if node.kind() != agent.node.kind() {
            println!(
                "{now:>6.1}s {:?} -> {:?} at ({:.1}, {:.1})",
                agent.node.kind(),
                node.kind(),
                agent.position.x,
                agent.position.y
            );
        }
        for intent in intents {
            if let Intent::MoveTo(p) = intent {
                heading_to = Some(p);
            }
        }
        agent.node = node;
        if let Some(p) = heading_to {
            let d = agent.position.distance(&p);
            if d <= speed * dt {
                agent.position = p;
                heading_to = None;
            } else {
                let k = speed * dt / d;
                agent.position = Point::new(
                    agent.position.x + (p.x - agent.position.x) * k,
                    agent.position.y + (p.y - agent.position.y) * k,
                );
            }
        }
    }
    Ok(())
}
