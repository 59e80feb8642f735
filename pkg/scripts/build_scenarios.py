"""Write the shipped scenario documents into src/infoseeker/scenarios/.

The scenario files are plain data and can be edited by hand; this script
exists so the long per-slot scripts (10 and 17 workers) stay consistent.
Run ``scripts/regen_goldens.py`` afterwards to refresh golden outputs.
"""

from __future__ import annotations

import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "infoseeker" / "scenarios"


def step(directive: str, manager: str) -> dict:
    return {"kind": "STEP", "directive": directive, "manager": manager}


STOP = {"kind": "STOP"}
ACCEPT = {"status": "accept"}


def call(tool: str, **arguments) -> dict:
    return {"tool": tool, "arguments": arguments}


def scripted(entries: dict) -> dict:
    return {"kind": "scripted", "script": {"format": "infoseeker-script/1", "entries": entries}}


def search_manager(entries: dict, fixture: dict, **extra) -> dict:
    return {
        "id": "search", "domain": "search",
        "capability": "parallel web search across many sources; fast retrieval of lists and facts",
        "backend": scripted(entries), "tools": {"kind": "mock", "fixture": fixture}, **extra,
    }


SEARCH_FIXTURE_DEFAULTS = {
    "web_search": "Top results: (1) guide.michelin.com listing; (2) en.wikipedia.org summary page; "
                  "(3) a restaurant review site with opening hours and addresses.",
    "fetch_page": "Page text retrieved. Headings: Overview, Cuisine, Address, Awards. Body omitted for brevity.",
}

RESTAURANTS = [
    ("L'Ambroisie", "French haute cuisine (classic)", "9 Place des Vosges, 75004 Paris, France"),
    ("Épicure (Le Bristol)", "Modern French / French fine dining",
     "Le Bristol, 112 Rue du Faubourg-Saint-Honoré, 75008 Paris, France"),
    ("Arpège", "Vegetable-focused creative French / haute cuisine", "84 Rue de Varenne, 75007 Paris, France"),
    ("Le Pré Catelan", "Contemporary French / creative haute cuisine",
     "Route de Suresnes, Bois de Boulogne, 75016 Paris, France"),
    ("Le Cinq (Four Seasons Hotel George V)", "Modern French / French fine dining",
     "Four Seasons Hotel George V, 31 Avenue George V, 75008 Paris, France"),
    ("Kei", "Modern creative (French technique with Japanese influence)", "5 Rue Coq-Héron, 75001 Paris, France"),
    ("Plénitude - Cheval Blanc Paris", "Creative gastronomic French", "8 Quai du Louvre, 75001 Paris, France"),
    ("Pierre Gagnaire", "Creative French / modern haute cuisine", "6 Rue Balzac, 75008 Paris, France"),
    ("Alléno Paris au Pavillon Ledoyen", "Creative French / haute cuisine", "8 Avenue Dutuit, 75008 Paris, France"),
    ("Le Gabriel (La Réserve Paris)", "Creative contemporary French",
     "La Réserve Paris, 42 Avenue Gabriel, 75008 Paris, France"),
]


def restaurants() -> dict:
    names = [r[0] for r in RESTAURANTS]
    name_list = "; ".join(names)
    entries: dict = {}
    host = {
        "host:step1": [step("Find the official list of Michelin three-star restaurants in Paris, France as of "
                            "31 December 2024, using reliable sources such as the Michelin Guide and Wikipedia.",
                            "search")],
        "host:step2": [step("For each of these Paris restaurants give the main cuisine style and the exact street "
                            f"address with postal code, as of 31 December 2024: {name_list}. Prefer the Michelin "
                            "Guide or each restaurant's official site.", "search")],
        "host:step3": [STOP],
    }
    table = ["| Restaurant | Main Cuisine Style | Address |", "| --- | --- | --- |"]
    table += [f"| {n} | {c} | {a} |" for n, c, a in RESTAURANTS]
    host["host:final"] = ["\n".join(table)]

    entries["search:decompose:1"] = [{"subtasks": [
        "Michelin Guide official list of three-star restaurants in Paris for 2024, with names and addresses.",
        "Wikipedia list of Michelin three-star restaurants in Paris as of 2024, with names and addresses.",
    ]}]
    entries["worker:1.0.0"] = [call("web_search", query="Michelin Guide Paris three stars 2024"),
                               "Source (Michelin Guide): Paris restaurants holding three stars in 2024: "
                               + ", ".join(names) + ". Source URL: guide.michelin.com."]
    entries["worker:1.1.0"] = [call("web_search", query="Wikipedia Michelin three-star restaurants Paris"),
                               "Source (Wikipedia): three-star restaurants in Paris, 2024 guide: "
                               + ", ".join(names[::-1]) + ". Both lists agree on ten entries."]
    entries["search:reflect:1.1"] = [ACCEPT]
    entries["search:aggregate:1"] = ["Ten Paris restaurants hold three Michelin stars as of the 2024 guide, "
                                     "confirmed by the Michelin Guide and Wikipedia: " + name_list + "."]
    entries["search:decompose:2"] = [{"subtasks": [
        f"{n}, Paris: give the main cuisine style and exact street address including postal code, as of "
        "31 December 2024. Use the Michelin Guide or the official site." for n in names
    ]}]
    for k, (n, c, a) in enumerate(RESTAURANTS):
        entries[f"worker:2.{k}.0"] = [
            call("web_search", query=f"{n} Paris Michelin cuisine address"),
            call("fetch_page", url=f"https://guide.michelin.com/fr/en/paris/restaurant-{k}"),
            f"{n}: cuisine style: {c}. Exact address: {a}. Sources: Michelin Guide entry and the official site.",
        ]
    entries["search:reflect:2.1"] = [ACCEPT]
    entries["search:aggregate:2"] = ["Cuisine style and address for all ten restaurants (source: Michelin Guide "
                                     "entries and official sites):\n"
                                     + "\n".join(f"- {n}: {c}; {a}" for n, c, a in RESTAURANTS)]
    fixture = {"format": "infoseeker-mcp-fixture/1", "defaults": SEARCH_FIXTURE_DEFAULTS}
    step2 = [20, 25, 18, 30, 22, 27, 19, 24, 21, 26]
    return {
        "format": "infoseeker-scenario/1",
        "name": "restaurants",
        "description": "Two search steps: a 2-way cross-source list lookup, then a 10-way per-restaurant "
                       "attribute lookup, finalized as a Markdown table.",
        "task": {"task_id": "restaurants", "text": (
            "List every Michelin three-star restaurant in Paris, France as of 31 December 2024 with its name, "
            "main cuisine style and exact address. Output a single Markdown table with the columns Restaurant, "
            "Main Cuisine Style, Address and fill every cell.")},
        "engine": {
            "backends": {"host": scripted(host)},
            "host": {"step_limit": 12},
            "scheduler": {"budget": 8, "clock": "virtual"},
            "managers": [search_manager(entries, fixture)],
        },
        "durations": {"subtasks": {"1.0": 40, "1.1": 55, **{f"2.{k}": d for k, d in enumerate(step2)}}},
        "expect": {
            "steps": 2, "terminated_by": "STOP", "subtasks_per_step": [2, 10], "wave_sizes": [[2], [10]],
            "managers": ["search", "search"], "flags": [[], []], "total_tool_calls": 22,
            "makespan_per_step": [55, 45], "golden_final": True, "golden_trace": True, "verify": True,
        },
        "golden": {"final": "restaurants.final.md", "trace": "restaurants.trace.jsonl"},
    }


def riddle() -> dict:
    wiki = "https://zh.wikipedia.org/wiki/醉打金枝"
    host = {
        "host:step1": [step("Identify the Tang-era figure who served four emperors and entered office through the "
                            "military examinations, and find classic dramas adapted from his story.", "search")],
        "host:step2": [step("Open the encyclopedia entry for the drama 醉打金枝 and read its character list: "
                            "who is the father of the female lead, Princess Shengping (升平公主)?", "browser")],
        "host:step3": [STOP],
        "host:final": ["唐代宗（李豫）"],
    }
    search = {
        "search:decompose:1": [{"subtasks": ["唐朝 四朝元老 武举名将", "以郭子仪为主角的电视剧"]}],
        "worker:1.0.0": [call("web_search", query="唐朝 四朝元老 武举名将"),
                         "Guo Ziyi (郭子仪) served Xuanzong, Suzong, Daizong and Dezong and rose through the "
                         "military examination. Source: baike and Wikipedia search snippets."],
        "worker:1.1.0": [call("web_search", query="以郭子仪为主角的电视剧"),
                         call("fetch_page", url=wiki),
                         "The best-known drama on Guo Ziyi's family is 醉打金枝 (Zui Da Jin Zhi). Its "
                         f"character page could not be read (CAPTCHA). [BROWSER_RECOMMENDED] {wiki}"],
        "search:reflect:1.1": [ACCEPT],
        "search:aggregate:1": ["The figure is Guo Ziyi (郭子仪), who served four Tang emperors after a military "
                               "examination start. The classic drama is 醉打金枝. The drama's character details "
                               "were blocked by a CAPTCHA.\n[BROWSER_RECOMMENDED] Some particulars unconfirmed. "
                               f"Relevant URLs for verification: {wiki}"],
    }
    browser = {
        "browser:decompose:2": [{"subtasks": [
            "Search Google for 醉打金枝 维基百科 and open the encyclopedia entry.",
            "On the 醉打金枝 entry, read the character introduction table.",
            "Verify the father field for the character 升平公主.",
        ]}],
        "worker:2.0.0": [call("browser_navigate", url="https://www.google.com/search?q=醉打金枝+维基百科"),
                         f"Opened the encyclopedia entry at {wiki}."],
        "worker:2.1.0": [call("browser_navigate", url=wiki), call("browser_extract", selector="table.characters"),
                         "Character table: 升平公主 is the daughter of Emperor Daizong (唐代宗, 李豫); 郭暧 is her "
                         "husband and Guo Ziyi is her father-in-law."],
        "worker:2.2.0": [call("browser_extract", selector="infobox"),
                         "Confirmed: 升平公主's father is 唐代宗 李豫."],
        "browser:reflect:2.1": [ACCEPT],
        "browser:aggregate:2": ["Verified on the encyclopedia entry for 醉打金枝: the female lead 升平公主 is the "
                                "daughter of Emperor Daizong of Tang (唐代宗, personal name 李豫). Guo Ziyi is her "
                                "father-in-law through her husband 郭暧."],
    }
    browser_fixture = {
        "format": "infoseeker-mcp-fixture/1",
        "tools": [
            {"name": "browser_navigate", "description": "Load a URL in a headless browser and return the title.",
             "input_schema": {"type": "object", "properties": {"url": {"type": "string"}}, "required": ["url"]}},
            {"name": "browser_extract", "description": "Extract text from the current page by CSS selector.",
             "input_schema": {"type": "object", "properties": {"selector": {"type": "string"}},
                              "required": ["selector"]}},
        ],
        "defaults": {
            "browser_navigate": "Loaded page. Title: 醉打金枝 - 维基百科，自由的百科全书. Interactive check passed.",
            "browser_extract": "角色介绍 | 升平公主: 唐代宗李豫之女，郭暧之妻 | 郭暧: 郭子仪之子 | 郭子仪: 汾阳王",
        },
    }
    search_fixture = {
        "format": "infoseeker-mcp-fixture/1",
        "defaults": {"web_search": "Search snippets: 郭子仪，历仕玄宗、肃宗、代宗、德宗四朝，以武举高第入仕。",
                     "fetch_page": "Access blocked: please complete the CAPTCHA to continue to this page."},
    }
    return {
        "format": "infoseeker-scenario/1",
        "name": "riddle",
        "description": "A search step that cannot confirm a detail and flags BROWSER_RECOMMENDED, followed by a "
                       "browser step that verifies it.",
        "task": {"task_id": "riddle", "text": (
            "In a classic drama adapted from history, one actor plays a figure who served four emperors and "
            "entered office through the military route. Who is the father of the drama's female lead?")},
        "engine": {
            "backends": {"host": scripted(host)},
            "scheduler": {"budget": 8, "clock": "virtual"},
            "managers": [
                search_manager(search, search_fixture),
                {"id": "browser", "domain": "browser",
                 "capability": "interactive page access for content behind logins, scripts or CAPTCHAs; "
                               "reads and verifies specific pages",
                 "backend": scripted(browser), "tools": {"kind": "mock", "fixture": browser_fixture}},
            ],
        },
        "durations": {"default": 30, "subtasks": {"1.1": 48, "2.1": 75}},
        "expect": {
            "steps": 2, "terminated_by": "STOP", "managers": ["search", "browser"],
            "flags": [["BROWSER_RECOMMENDED"], []], "wave_sizes": [[2], [3]], "final_text": "唐代宗（李豫）",
            "makespan_per_step": [48, 75], "total_tool_calls": 7, "golden_trace": True, "verify": True,
        },
        "golden": {"trace": "riddle.trace.jsonl"},
    }


def fan_out(name: str, description: str, durations: dict, n: int, budget: int, expect: dict,
            sweep: list[int]) -> dict:
    host = {
        "host:step1": [step(f"Collect one fact from each of {n} independent sources about the topic.", "search")],
        "host:step2": [STOP],
        "host:final": [f"Collected {n} facts."],
    }
    entries: dict = {"search:decompose:1": [{"subtasks": [f"Source {k + 1}: retrieve its fact." for k in range(n)]}]}
    for k in range(n):
        entries[f"worker:1.{k}.0"] = [call("web_search", query=f"topic source {k + 1}"), f"Fact from source {k + 1}."]
    entries["search:reflect:1.1"] = [ACCEPT]
    entries["search:aggregate:1"] = [f"All {n} sources answered; one fact each."]
    fixture = {"format": "infoseeker-mcp-fixture/1", "defaults": SEARCH_FIXTURE_DEFAULTS}
    return {
        "format": "infoseeker-scenario/1",
        "name": name,
        "description": description,
        "task": {"task_id": name, "text": f"Gather one fact from each of {n} sources."},
        "engine": {
            "backends": {"host": scripted(host)},
            "scheduler": {"budget": budget, "clock": "virtual"},
            "managers": [search_manager(entries, fixture, decompose_cap=n)],
        },
        "durations": durations,
        "sweep": sweep,
        "expect": {"steps": 1, "wave_sizes": [[n]], "total_tool_calls": n, "golden_trace": True, "verify": True,
                   **expect},
        "golden": {"trace": f"{name}.trace.jsonl"},
    }


SWEEP = [1, 2, 4, 8, 16, 17]


def scaling() -> dict:
    return fan_out(
        "scaling", "17 unit-duration subtasks in one wave; makespan falls from 17 to 1 as the budget grows.",
        {"default": 1}, 17, 17,
        {"makespan": 1, "speedup": {"budget": 17, "value": 17, "tolerance": 1e-9},
         "sweep": {"budgets": SWEEP, "makespans": [17, 9, 5, 3, 2, 1], "monotone": "strict"}},
        SWEEP,
    )


def calibrated() -> dict:
    # sixteen equal subtasks plus one long one: sum 911, longest 162
    short = (911 - 162) / 16
    return fan_out(
        "calibrated_911", "Worker-pool scaling with durations summing to 911 and a longest subtask of 162.",
        {"default": short, "subtasks": {"1.16": 162}}, 17, 17,
        {"makespan": 162, "speedup": {"budget": 17, "value": 5.62, "tolerance": 0.01},
         "sweep": {"budgets": SWEEP, "makespans": [911, 536.5, 349.25, 255.625, 208.8125, 162],
                   "monotone": "strict"}},
        SWEEP,
    )


def reflect_injection() -> dict:
    host = {
        "host:step1": [step("Find the founding year, headquarters city and current CEO of the example company.",
                            "search")],
        "host:step2": [STOP],
        "host:final": ["Founded 1998, headquartered in Springfield, CEO Dana Lee."],
    }
    entries = {
        "search:decompose:1": [{"subtasks": ["Founding year of the example company.",
                                             "Headquarters city of the example company.",
                                             "Current CEO of the example company."]}],
        "worker:1.0.0": [call("web_search", query="example company founded"), "Founded in 1998."],
        # this query hits a failing tool fixture; the worker gives up after its retries
        "worker:1.1.0": [call("fetch_page", url="https://example.com/broken-about-page")],
        "worker:1.2.0": [call("web_search", query="example company CEO"), "The current CEO is Dana Lee."],
        "search:reflect:1.1": [{"status": "revise", "rationale": "slot 1 failed on a broken page",
                                "replacements": [{"slot": 1, "text": "Headquarters city of the example company, "
                                                  "from its registry filing instead of its website."}]}],
        "worker:1.1.1": [call("web_search", query="example company registry filing headquarters"),
                         "Headquartered in Springfield (registry filing)."],
        "search:reflect:1.2": [ACCEPT],
        "search:aggregate:1": ["Founded 1998; headquarters Springfield (registry filing; the company site was "
                               "unreachable); CEO Dana Lee."],
    }
    fixture = {
        "format": "infoseeker-mcp-fixture/1",
        "defaults": SEARCH_FIXTURE_DEFAULTS,
        "responses": [{"tool": "fetch_page", "args": {"url": "https://example.com/broken-about-page"},
                       "replies": [{"is_error": True, "text": "HTTP 503 Service Unavailable"}]}],
    }
    return {
        "format": "infoseeker-scenario/1",
        "name": "reflect_injection",
        "description": "One slot fails its tool calls; reflection replaces only that slot and a one-subtask "
                       "revision wave recovers it.",
        "task": {"task_id": "reflect_injection",
                 "text": "When was the example company founded, where is it headquartered, and who is its CEO?"},
        "engine": {
            "backends": {"host": scripted(host)},
            "scheduler": {"budget": 8, "clock": "virtual"},
            "worker": {"tool_retry_limit": 3},
            "managers": [search_manager(entries, fixture)],
        },
        "durations": {"default": 10, "subtasks": {"1.1.1": 12}},
        "expect": {
            "steps": 1, "wave_sizes": [[3, 1]], "wave_slots": [[[0, 1, 2], [1]]], "makespan_per_step": [22],
            "total_tool_calls": 7, "aggregate_ok": [3], "flags": [[]], "golden_trace": True, "verify": True,
        },
        "golden": {"trace": "reflect_injection.trace.jsonl"},
    }


def token_guard() -> dict:
    host = {
        "host:step1": [step("Summarize the three linked reports on regional rainfall.", "search")],
        "host:step2": [STOP],
        "host:final": ["Two of three reports summarized; the third was too large to process."],
    }
    entries = {
        "search:decompose:1": [{"subtasks": ["Summarize report A.", "Summarize report B.", "Summarize report C."]}],
        "worker:1.0.0": [call("fetch_page", url="https://example.org/report-a"), "Report A: rainfall up 4%."],
        "worker:1.1.0": [call("fetch_page", url="https://example.org/report-b"), "Report B: rainfall flat."],
        # report C is huge, so the next worker prompt is over the ceiling
        "worker:1.2.0": [call("fetch_page", url="https://example.org/report-c"), "Report C: never reached."],
        "search:reflect:1.1": [ACCEPT],
        "search:aggregate:1": ["Report A: rainfall up 4%. Report B: rainfall flat. Report C could not be "
                               "processed (the page exceeded the context budget)."],
    }
    fixture = {
        "format": "infoseeker-mcp-fixture/1",
        "defaults": SEARCH_FIXTURE_DEFAULTS,
        "responses": [{"tool": "fetch_page", "args": {"url": "https://example.org/report-c"},
                       "replies": [{"text_repeat": {"text": "Rainfall table row with station, month and mm. ",
                                                    "times": 400}}]}],
    }
    return {
        "format": "infoseeker-scenario/1",
        "name": "token_guard",
        "description": "A tool payload pushes one worker prompt past the token ceiling; that subtask fails with "
                       "TokenLimitExceeded and the step aggregates from the other two.",
        "task": {"task_id": "token_guard", "text": "Summarize the three rainfall reports."},
        "engine": {
            "token_ceiling": 3000,
            "backends": {"host": scripted(host)},
            "scheduler": {"budget": 8, "clock": "virtual"},
            "managers": [search_manager(entries, fixture)],
        },
        "durations": {"default": 5},
        "expect": {
            "steps": 1, "wave_sizes": [[3]], "errors": ["TokenLimitExceeded"], "aggregate_ok": [2],
            "total_tool_calls": 3, "golden_trace": True, "verify": True,
        },
        "golden": {"trace": "token_guard.trace.jsonl"},
    }


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for doc in (restaurants(), riddle(), scaling(), calibrated(), reflect_injection(), token_guard()):
        path = OUT / f"{doc['name']}.scenario.json"
        path.write_text(json.dumps(doc, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        print(path.relative_to(OUT.parents[2]))


if __name__ == "__main__":
    main()
