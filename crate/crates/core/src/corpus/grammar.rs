//! Template grammar for synthetic hotel / restaurant / taxi dialogues.
//!
//! User utterances carry no style cues; the style of an episode only shows up
//! in the system responses, through the marker lexicons. Responses are a
//! deterministic function of the user request and of slots carried over from
//! earlier turns, so a model that tracks the dialogue can reproduce them.

use crate::rng::Rng;

use super::{Domain, Style};

pub const FORMAL_MARKERS: [&str; 4] = ["certainly", "however", "recommend", "assist"];
pub const CASUAL_MARKERS: [&str; 4] = ["yeah", "gonna", "cool", "no_problem"];

const PRICES: [&str; 3] = ["cheap", "moderate", "expensive"];
const AREAS: [&str; 3] = ["north", "south", "centre"];
const FOODS: [&str; 6] = ["italian", "chinese", "indian", "french", "thai", "british"];
const PLACES: [&str; 8] = [
    "station", "airport", "museum", "college", "hospital", "cinema", "theatre", "market",
];
const TIMES: [&str; 8] = [
    "09:00", "10:30", "12:15", "14:45", "17:30", "19:00", "20:15", "21:30",
];
const PEOPLE: [&str; 5] = ["two", "three", "four", "five", "six"];
const NIGHTS: [&str; 4] = ["one", "two", "three", "four"];
const DAYS: [&str; 7] = [
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
];
const CARS: [&str; 6] = ["toyota", "skoda", "tesla", "volvo", "ford", "audi"];
const COLORS: [&str; 6] = ["black", "white", "red", "blue", "grey", "yellow"];

// [area][price]
const HOTEL_NAMES: [[&str; 3]; 3] = [
    ["city_stop", "acorn_lodge", "alpha_milton"],
    ["rosas_inn", "aylesbray_lodge", "lensfield_hotel"],
    ["el_shaddai", "cityroomz", "university_arms"],
];
// [food][area]
const RESTAURANT_NAMES: [[&str; 3]; 6] = [
    ["da_vinci", "pizza_hut", "zizzi"],
    ["golden_wok", "lucky_star", "jinling"],
    ["royal_spice", "curry_garden", "kohinoor"],
    ["two_two", "cote", "bistro_blanc"],
    ["bangkok_city", "sala_thong", "thai_orchid"],
    ["midsummer_house", "the_oak", "chop_house"],
];

/// One generated turn before tokenization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTurn {
    pub user: String,
    pub domain: Domain,
    pub response: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawEpisode {
    pub id: u64,
    pub style: Style,
    pub turns: Vec<RawTurn>,
}

#[derive(Clone, Copy, Default)]
struct HotelState {
    price: usize,
    area: usize,
    active: bool,
}

#[derive(Clone, Copy, Default)]
struct RestaurantState {
    area: usize,
    food: usize,
    active: bool,
}

#[derive(Default)]
struct DialogueState {
    hotel: HotelState,
    restaurant: RestaurantState,
}

fn pick(rng: &mut Rng, n: usize) -> usize {
    rng.below(n)
}

fn formal(style: Style) -> bool {
    style == Style::Formal
}

fn hotel_request(rng: &mut Rng, st: &mut DialogueState, style: Style) -> (String, String) {
    let price = pick(rng, PRICES.len());
    let area = pick(rng, AREAS.len());
    st.hotel = HotelState {
        price,
        area,
        active: true,
    };
    let (p, a) = (PRICES[price], AREAS[area]);
    let name = HOTEL_NAMES[area][price];
    match pick(rng, 3) {
        0 => {
            let n = NIGHTS[pick(rng, NIGHTS.len())];
            let user = format!("i need a {p} hotel in the {a} for {n} nights");
            let resp = if formal(style) {
                format!("certainly . i recommend {name} , a {p} hotel in the {a} . shall i book {n} nights ?")
            } else {
                format!("yeah , {name} is a cool {p} spot in the {a} . wanna book {n} nights ?")
            };
            (user, resp)
        }
        1 => {
            let user = format!("i am looking for a {p} place to stay in the {a}");
            (user, hotel_offer(style, name, p, a))
        }
        _ => {
            let user = format!("can you find me a hotel in the {a} ? it should be {p}");
            (user, hotel_offer(style, name, p, a))
        }
    }
}

fn hotel_offer(style: Style, name: &str, p: &str, a: &str) -> String {
    if formal(style) {
        format!("certainly . i recommend {name} , a {p} hotel in the {a} .")
    } else {
        format!("yeah , {name} is a cool {p} spot in the {a} .")
    }
}

fn hotel_followup(rng: &mut Rng, st: &mut DialogueState, style: Style) -> (String, String) {
    let h = &mut st.hotel;
    let user = if rng.chance(0.5) {
        h.area = (h.area + 1 + pick(rng, AREAS.len() - 1)) % AREAS.len();
        format!("what about the {} instead ?", AREAS[h.area])
    } else {
        h.price = (h.price + 1 + pick(rng, PRICES.len() - 1)) % PRICES.len();
        format!("is there something {} instead ?", PRICES[h.price])
    };
    let (p, a) = (PRICES[h.price], AREAS[h.area]);
    let name = HOTEL_NAMES[h.area][h.price];
    let resp = if formal(style) {
        format!("however , {name} is a {p} hotel in the {a} .")
    } else {
        format!("cool , try {name} , a {p} spot in the {a} .")
    };
    (user, resp)
}

fn hotel_booking(rng: &mut Rng, st: &mut DialogueState, style: Style) -> (String, String) {
    let h = st.hotel;
    let people = PEOPLE[pick(rng, PEOPLE.len())];
    let day = DAYS[pick(rng, DAYS.len())];
    let name = HOTEL_NAMES[h.area][h.price];
    let user = format!("please book it for {people} people starting {day}");
    let resp = if formal(style) {
        format!("certainly . i have booked {name} for {people} people from {day} .")
    } else {
        format!("cool , {name} is booked for {people} people from {day} .")
    };
    st.hotel.active = false;
    (user, resp)
}

fn restaurant_request(rng: &mut Rng, st: &mut DialogueState, style: Style) -> (String, String) {
    let food = pick(rng, FOODS.len());
    let area = pick(rng, AREAS.len());
    let price = pick(rng, PRICES.len());
    st.restaurant = RestaurantState {
        area,
        food,
        active: true,
    };
    let (f, a, p) = (FOODS[food], AREAS[area], PRICES[price]);
    let name = RESTAURANT_NAMES[food][area];
    match pick(rng, 3) {
        0 => {
            let user = format!("i want {f} food in the {a}");
            let resp = if formal(style) {
                format!("certainly . {name} serves {f} food in the {a} .")
            } else {
                format!("yeah , {name} does great {f} food in the {a} .")
            };
            (user, resp)
        }
        1 => {
            let user = format!("find me a {p} {f} restaurant in the {a}");
            let resp = if formal(style) {
                format!("certainly . i recommend {name} , a {p} {f} place in the {a} .")
            } else {
                format!("cool , {name} is a {p} {f} place in the {a} .")
            };
            (user, resp)
        }
        _ => {
            let people = PEOPLE[pick(rng, PEOPLE.len())];
            let time = TIMES[pick(rng, TIMES.len())];
            // table requests name no area and default to the centre
            st.restaurant.area = 2;
            let name = RESTAURANT_NAMES[food][2];
            let user = format!("i would like a table for {people} at {time} for {f} food");
            let resp = if formal(style) {
                format!("certainly . i have reserved a table at {name} for {people} at {time} .")
            } else {
                format!("yeah , you are gonna eat at {name} with {people} people at {time} .")
            };
            (user, resp)
        }
    }
}

fn restaurant_followup(rng: &mut Rng, st: &mut DialogueState, style: Style) -> (String, String) {
    let r = &mut st.restaurant;
    r.food = (r.food + 1 + pick(rng, FOODS.len() - 1)) % FOODS.len();
    let (f, a) = (FOODS[r.food], AREAS[r.area]);
    let name = RESTAURANT_NAMES[r.food][r.area];
    let user = format!("how about {f} food instead ?");
    let resp = if formal(style) {
        format!("however , {name} serves {f} food in the {a} .")
    } else {
        format!("no_problem , {name} does {f} food in the {a} .")
    };
    (user, resp)
}

fn taxi_request(rng: &mut Rng, style: Style) -> (String, String) {
    let dest = pick(rng, PLACES.len());
    let mut src = pick(rng, PLACES.len() - 1);
    if src >= dest {
        src += 1;
    }
    let time = pick(rng, TIMES.len());
    let (d, s, t) = (PLACES[dest], PLACES[src], TIMES[time]);
    match pick(rng, 3) {
        0 => {
            let (car, color) = (CARS[dest % CARS.len()], COLORS[time % COLORS.len()]);
            let user = format!("i need a taxi to the {d} at {t}");
            let resp = if formal(style) {
                format!("certainly . a {color} {car} will take you to the {d} at {t} .")
            } else {
                format!("yeah , a {color} {car} is gonna pick you up at {t} .")
            };
            (user, resp)
        }
        1 => {
            let (car, color) = (CARS[dest % CARS.len()], COLORS[src % COLORS.len()]);
            let user = format!("book a taxi from the {s} to the {d}");
            let resp = if formal(style) {
                format!("i can assist . a {color} {car} will drive you from the {s} to the {d} .")
            } else {
                format!("cool , a {color} {car} is gonna take you to the {d} .")
            };
            (user, resp)
        }
        _ => {
            let (car, color) = (CARS[src % CARS.len()], COLORS[time % COLORS.len()]);
            let user = format!("can i get a cab leaving the {s} after {t}");
            let resp = if formal(style) {
                format!("certainly . a {color} {car} will collect you from the {s} after {t} .")
            } else {
                format!("no_problem , a {color} {car} is gonna grab you at the {s} after {t} .")
            };
            (user, resp)
        }
    }
}

fn closing(rng: &mut Rng, style: Style) -> (String, String) {
    let user = if rng.chance(0.5) {
        "thank you , that is all i need".to_string()
    } else {
        "thanks , goodbye".to_string()
    };
    let resp = if formal(style) {
        "it was a pleasure to assist you . goodbye .".to_string()
    } else {
        "no_problem , see you later !".to_string()
    };
    (user, resp)
}

fn fresh_request(rng: &mut Rng, st: &mut DialogueState, domain: Domain, style: Style) -> (String, String) {
    match domain {
        Domain::Hotel => hotel_request(rng, st, style),
        Domain::Restaurant => restaurant_request(rng, st, style),
        Domain::Taxi => taxi_request(rng, style),
    }
}

fn continuation(rng: &mut Rng, st: &mut DialogueState, domain: Domain, style: Style) -> (String, String) {
    match domain {
        Domain::Hotel if st.hotel.active => {
            if rng.chance(0.5) {
                hotel_booking(rng, st, style)
            } else {
                hotel_followup(rng, st, style)
            }
        }
        Domain::Restaurant if st.restaurant.active => restaurant_followup(rng, st, style),
        _ => fresh_request(rng, st, domain, style),
    }
}

/// Draws one episode of 3 to 6 turns.
pub fn episode(rng: &mut Rng, id: u64) -> RawEpisode {
    let style = if rng.chance(0.5) {
        Style::Formal
    } else {
        Style::Casual
    };
    let n_turns = 3 + rng.below(4);
    let mut st = DialogueState::default();
    let mut domain = *rng.choose(&Domain::ALL);
    let mut turns = Vec::with_capacity(n_turns);
    for t in 0..n_turns {
        let (user, response) = if t == 0 {
            fresh_request(rng, &mut st, domain, style)
        } else if t == n_turns - 1 && rng.chance(0.5) {
            closing(rng, style)
        } else if rng.chance(0.7) {
            continuation(rng, &mut st, domain, style)
        } else {
            let others: Vec<Domain> = Domain::ALL.into_iter().filter(|&d| d != domain).collect();
            domain = *rng.choose(&others);
            fresh_request(rng, &mut st, domain, style)
        };
        turns.push(RawTurn {
            user,
            domain,
            response,
        });
    }
    RawEpisode { id, style, turns }
}
