//! Synthetic task suites.
//!
//! The transfer suite mixes three kinds of tasks:
//! - solo tasks with their own scenario and cue;
//! - cross-user pairs: two users with near-identical requests (different
//!   order numbers) that share one cue, so either user's reflection helps
//!   the other;
//! - twins: two users sending the very same request whose right handling
//!   differs (e-card vs. WeChat refund), so only retrieving more than one
//!   memory gets both right.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evalkit::protocol::{validate_suite, TaskSpec};

const TEMPLATES: &[(&str, &str)] = &[
    ("The customer wants to cancel order {order} for the {product} before it ships.", "manage_order_tool(action=cancel, order_id={order})"),
    ("The customer asks for the logistics status of order {order} containing the {product}.", "get_logistics_tool(order_id={order})"),
    ("The customer requests a refund for the damaged {product} in order {order}.", "create_refund_tool(order_id={order}, reason=damaged)"),
    ("The customer wants to exchange the {product} from order {order} for a larger size.", "create_exchange_tool(order_id={order}, size=up)"),
    ("The customer asks to change the delivery address of order {order} with the {product}.", "update_address_tool(order_id={order})"),
    ("The customer requests an invoice for order {order} that included the {product}.", "issue_invoice_tool(order_id={order})"),
    ("The customer wants the cashback for a shared review of the {product} in order {order}.", "get_image_info_tool(order_id={order}) then register_cashback"),
    ("The customer asks to book installation guidance for the {product} from order {order}.", "book_service_tool(order_id={order}, type=installation_guidance)"),
    ("The customer complains that the {product} in order {order} arrived with missing accessories.", "reship_parts_tool(order_id={order})"),
    ("The customer wants to apply a coupon retroactively to order {order} for the {product}.", "price_protect_tool(order_id={order})"),
];

const PRODUCTS: &[&str] = &[
    "electric water heater",
    "red cotton shirt",
    "wireless earbuds",
    "standing desk",
    "rice cooker",
    "running shoes",
    "air purifier",
    "leather wallet",
    "robot vacuum",
    "winter jacket",
    "espresso machine",
    "hiking backpack",
];

const TWIN_SCENARIO: &str =
    "The customer wants to cancel paid order {order} for the {product} and get the money back.";
const TWIN_CUES: [&str; 2] = [
    "cancel order {order} then call manage_ecard(action=refund) because payment was JD E-card",
    "cancel order {order} with no extra refund call because payment was WeChat",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteShape {
    pub solo: usize,
    pub pairs: usize,
    pub twins: usize,
}

impl SuiteShape {
    /// 20 solo tasks, 10 cross-user pairs and 5 twin pairs: 50 tasks.
    pub const TRANSFER: SuiteShape = SuiteShape {
        solo: 20,
        pairs: 10,
        twins: 5,
    };

    pub fn task_count(&self) -> usize {
        self.solo + 2 * self.pairs + 2 * self.twins
    }
}

/// The 50-task transfer suite.
pub fn transfer_suite(seed: u64) -> Vec<TaskSpec> {
    generate_suite(SuiteShape::TRANSFER, seed)
}

pub fn generate_suite(shape: SuiteShape, seed: u64) -> Vec<TaskSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut combos: Vec<(usize, usize)> = (0..TEMPLATES.len())
        .flat_map(|t| (0..PRODUCTS.len()).map(move |p| (t, p)))
        .collect();
    combos.shuffle(&mut rng);
    assert!(
        shape.solo + shape.pairs <= combos.len(),
        "suite shape needs more distinct scenarios than the vocabulary offers"
    );
    assert!(shape.twins <= PRODUCTS.len(), "too many twin pairs");
    let mut combos = combos.into_iter();

    let mut next_order = {
        let mut used = std::collections::BTreeSet::new();
        move |rng: &mut ChaCha8Rng| loop {
            let order: u64 = rng.random_range(313_000_000_000..314_000_000_000);
            if used.insert(order) {
                return order.to_string();
            }
        }
    };
    let fill = |text: &str, order: &str, product: &str| {
        text.replace("{order}", order).replace("{product}", product)
    };

    let mut tasks = Vec::with_capacity(shape.task_count());
    let mut user = 0usize;
    let mut next_user = || {
        user += 1;
        format!("u{user:03}")
    };

    for i in 0..shape.solo {
        let (t, p) = combos.next().expect("checked above");
        let order = next_order(&mut rng);
        let (scenario, cue) = TEMPLATES[t];
        tasks.push(TaskSpec {
            task_id: format!("solo-{i:02}"),
            scenario: fill(scenario, &order, PRODUCTS[p]),
            required_cue: fill(cue, &order, PRODUCTS[p]),
            difficulty: rng.random_range(0.85..=1.0),
            user_id: next_user(),
        });
    }

    for i in 0..shape.pairs {
        let (t, p) = combos.next().expect("checked above");
        let (scenario, cue) = TEMPLATES[t];
        let first_order = next_order(&mut rng);
        let shared_cue = fill(cue, &first_order, PRODUCTS[p]);
        for side in ["a", "b"] {
            let order = if side == "a" { first_order.clone() } else { next_order(&mut rng) };
            tasks.push(TaskSpec {
                task_id: format!("pair-{i:02}{side}"),
                scenario: fill(scenario, &order, PRODUCTS[p]),
                required_cue: shared_cue.clone(),
                difficulty: rng.random_range(0.85..=1.0),
                user_id: next_user(),
            });
        }
    }

    for i in 0..shape.twins {
        let order = next_order(&mut rng);
        let product = PRODUCTS[i % PRODUCTS.len()];
        for (side, cue) in ["a", "b"].into_iter().zip(TWIN_CUES) {
            tasks.push(TaskSpec {
                task_id: format!("twin-{i:02}{side}"),
                scenario: fill(TWIN_SCENARIO, &order, product),
                required_cue: fill(cue, &order, product),
                difficulty: 1.0,
                user_id: next_user(),
            });
        }
    }
    tasks
}

pub fn load_suite(path: &Path) -> Result<Vec<TaskSpec>> {
    let text = fs::read_to_string(path)?;
    let tasks: Vec<TaskSpec> = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidRequest(format!("{}: {e}", path.display())))?;
    validate_suite(&tasks)?;
    Ok(tasks)
}

pub fn save_suite(path: &Path, tasks: &[TaskSpec]) -> Result<()> {
    let text = serde_json::to_string_pretty(tasks).expect("tasks serialize");
    fs::write(path, text + "\n")?;
    Ok(())
}
