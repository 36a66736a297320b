#!/usr/bin/env python3
"""Regenerates the maze case-study fixtures (protocols A-D, users, images).

Four groups x two conditions:
  A = prediction only,        difficult mazes
  B = prediction + explanation, difficult mazes
  C = prediction only,        easy/medium mazes
  D = prediction + explanation, easy/medium mazes

Every maze has four labelled exits (A-D) of which exactly one is reachable
from the centre. Explanation images highlight the path the "AI" detected;
when the AI is wrong that path crosses a wall.

Deterministic: run it twice and the outputs are byte-identical.
    python3 fixtures/case-study/generate_fixtures.py
"""

import json
import random
from pathlib import Path

from PIL import Image, ImageDraw

HERE = Path(__file__).resolve().parent
ASSETS = HERE / "assets"
CELL = 14
MARGIN = 22
LABELS = ["A", "B", "C", "D"]


def carve(n, rng):
    """Spanning-tree maze on an n x n grid; returns the set of open edges."""
    open_edges = set()
    start = (n // 2, n // 2)
    seen = {start}
    stack = [start]
    while stack:
        x, y = stack[-1]
        nbrs = [(x + dx, y + dy) for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1))]
        nbrs = [c for c in nbrs if 0 <= c[0] < n and 0 <= c[1] < n and c not in seen]
        if not nbrs:
            stack.pop()
            continue
        nxt = rng.choice(nbrs)
        open_edges.add(frozenset(((x, y), nxt)))
        seen.add(nxt)
        stack.append(nxt)
    return open_edges


def path(n, open_edges, a, b):
    prev = {a: None}
    queue = [a]
    while queue:
        cur = queue.pop(0)
        if cur == b:
            break
        x, y = cur
        for nxt in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if nxt not in prev and frozenset((cur, nxt)) in open_edges:
                prev[nxt] = cur
                queue.append(nxt)
    if b not in prev:
        return None
    out = [b]
    while prev[out[-1]] is not None:
        out.append(prev[out[-1]])
    return out[::-1]


def exits(n):
    """One exit per side: top, right, bottom, left."""
    mid = n // 2
    return [(mid - 1, 0), (n - 1, mid - 1), (mid + 1, n - 1), (0, mid + 1)]


def make_maze(n, rng):
    """Returns (open_edges, exit cells, index of the reachable exit, tree paths)."""
    while True:
        edges = carve(n, rng)
        centre = (n // 2, n // 2)
        cells = exits(n)
        tree_paths = [path(n, edges, centre, c) for c in cells]
        correct = rng.randrange(4)
        # Cut the last edge into each wrong exit; valid when the correct
        # exit's route does not run through a cut edge.
        cuts = [frozenset(tree_paths[i][-2:]) for i in range(4) if i != correct]
        if any(c in {frozenset(p) for p in zip(tree_paths[correct], tree_paths[correct][1:])} for c in cuts):
            continue
        blocked = edges - set(cuts)
        if path(n, blocked, centre, cells[correct]) is None:
            continue
        if any(path(n, blocked, centre, cells[i]) for i in range(4) if i != correct):
            continue
        return blocked, cells, correct, tree_paths


def cell_centre(c):
    return (MARGIN + c[0] * CELL + CELL // 2, MARGIN + c[1] * CELL + CELL // 2)


def exit_anchor(n, side, c):
    x, y = cell_centre(c)
    return [(x, MARGIN - 12), (MARGIN + n * CELL + 12, y), (x, MARGIN + n * CELL + 12), (MARGIN - 12, y)][side]


def draw(n, edges, cells, highlight=None):
    size = 2 * MARGIN + n * CELL
    img = Image.new("RGB", (size, size), "white")
    d = ImageDraw.Draw(img)
    for x in range(n):
        for y in range(n):
            x0, y0 = MARGIN + x * CELL, MARGIN + y * CELL
            if y == 0 or frozenset(((x, y), (x, y - 1))) not in edges:
                d.line([(x0, y0), (x0 + CELL, y0)], fill="black", width=2)
            if x == 0 or frozenset(((x, y), (x - 1, y))) not in edges:
                d.line([(x0, y0), (x0, y0 + CELL)], fill="black", width=2)
    d.line([(MARGIN, MARGIN + n * CELL), (MARGIN + n * CELL, MARGIN + n * CELL)], fill="black", width=2)
    d.line([(MARGIN + n * CELL, MARGIN), (MARGIN + n * CELL, MARGIN + n * CELL)], fill="black", width=2)
    # Open the four exit gaps and label them.
    for side, c in enumerate(cells):
        x0, y0 = MARGIN + c[0] * CELL, MARGIN + c[1] * CELL
        gap = [
            [(x0 + 2, y0), (x0 + CELL - 2, y0)],
            [(x0 + CELL, y0 + 2), (x0 + CELL, y0 + CELL - 2)],
            [(x0 + 2, y0 + CELL), (x0 + CELL - 2, y0 + CELL)],
            [(x0, y0 + 2), (x0, y0 + CELL - 2)],
        ][side]
        d.line(gap, fill="white", width=3)
        ax, ay = exit_anchor(n, side, c)
        d.text((ax - 3, ay - 6), LABELS[side], fill="navy")
    cx, cy = cell_centre((n // 2, n // 2))
    d.ellipse([cx - 4, cy - 4, cx + 4, cy + 4], fill="green")
    if highlight:
        d.line([cell_centre(c) for c in highlight], fill="red", width=3)
    return img


def save(img, rel):
    out = ASSETS / rel
    out.parent.mkdir(parents=True, exist_ok=True)
    img.save(out, format="PNG", optimize=True)
    return rel


def build_set(name, sizes, rng):
    """Six mazes (two per task) with images, the answer and AI predictions."""
    mazes = []
    # AI correctness per maze: training 1 has no AI; training 2 and the
    # final task each contain one wrong prediction.
    ai_right = [None, None, True, False, False, True]
    for k, n in enumerate(sizes):
        edges, cells, correct, tree_paths = make_maze(n, rng)
        stem = f"{name}-{k + 1}"
        maze = {
            "src": save(draw(n, edges, cells), f"mazes/{stem}.png"),
            "answer": LABELS[correct],
            "size": n,
        }
        if ai_right[k] is not None:
            predicted = correct if ai_right[k] else rng.choice([i for i in range(4) if i != correct])
            maze["prediction"] = LABELS[predicted]
            maze["explanation"] = save(
                draw(n, edges, cells, highlight=tree_paths[predicted]), f"explanations/{stem}-path.png"
            )
        mazes.append(maze)
    return mazes


DEMOGRAPHICS = {
    "kind": "questionnaire",
    "id": "demographics",
    "title": "About you",
    "questions": [
        {"kind": "choice", "id": "age", "prompt": "Your age group",
         "options": ["18-24", "25-34", "35-44", "45-54", "55+"], "exclusive": True},
        {"kind": "choice", "id": "gender", "prompt": "Your gender",
         "options": ["Female", "Male", "Non-binary", "Prefer not to say"], "exclusive": True},
        {"kind": "choice", "id": "education", "prompt": "Highest completed education",
         "options": ["Secondary", "Bachelor", "Master", "Doctorate", "Other"], "exclusive": True},
        {"kind": "slider", "id": "ai_familiarity", "prompt": "How familiar are you with AI systems?",
         "min": 1, "max": 7, "step": 1, "min_label": "Not at all", "max_label": "Very familiar"},
    ],
}

FINAL_QUESTIONNAIRE = {
    "kind": "questionnaire",
    "id": "final-questionnaire",
    "title": "Your experience",
    "questions": [
        {"kind": "slider", "id": "trust", "prompt": "How much did you trust the AI's suggestions?",
         "min": 0, "max": 10, "step": 1, "min_label": "Not at all", "max_label": "Completely"},
        {"kind": "choice", "id": "cues", "prompt": "What did you rely on to choose an exit?",
         "options": ["My own search", "The AI prediction", "The highlighted path", "Guessing"],
         "exclusive": False},
        {"kind": "text", "id": "comments", "prompt": "Any comments about the study?",
         "required": False, "max_len": 1000},
    ],
}


def instance(task_no, k, maze, with_ai, with_explanation):
    inst = {
        "id": f"t{task_no}-m{k + 1}",
        "instance": {"kind": "image", "src": maze["src"],
                     "alt": f"Maze of {maze['size']} by {maze['size']} cells with exits A to D"},
        "prediction": None,
        "explanations": [],
        "expected": [maze["answer"]],
    }
    if with_ai:
        inst["prediction"] = {"kind": "text", "value": f"The AI predicts exit {maze['prediction']}.",
                              "label": "AI prediction", "position": "top"}
        if with_explanation:
            inst["explanations"] = [{"kind": "image", "src": maze["explanation"],
                                     "alt": "Maze with the path detected by the AI highlighted in red",
                                     "label": "Path detected by the AI"}]
    return inst


def task(task_no, title, mazes, feedback, with_ai, with_explanation):
    return {
        "kind": "task",
        "id": f"task{task_no}",
        "title": title,
        "decision": {"prompt": "Which exit can be reached from the green dot?",
                     "options": LABELS, "exclusive": True},
        "randomize_instances": True,
        "instance_feedback": feedback,
        "time_limit_s": 20,
        "show_progress": True,
        "scoring": {"points_per_correct": 1, "template": "You found {score} of {max} exits."},
        "instances": [instance(task_no, k, m, with_ai, with_explanation) for k, m in enumerate(mazes)],
    }


def experiment(no, title, body, task_spec):
    return {
        "kind": "experiment",
        "id": f"phase{no}",
        "title": title,
        "elements": [
            {"kind": "instruction", "id": f"phase{no}-instructions", "title": title, "body": body,
             "ack_label": "Start"},
            task_spec,
        ],
    }


def protocol(letter, mazes, with_explanation, difficulty):
    ai_text = ("An AI will suggest an exit and **highlight the path it detected**."
               if with_explanation else "An AI will suggest an exit.")
    phases = [
        experiment(1, "Training 1",
                   "Find the exit reachable from the **green dot**.\n\n"
                   "- You have *20 seconds* per maze.\n- After each answer you will see whether it was right.",
                   task(1, "Training without AI", mazes[0:2], "correctness_only", False, False)),
        experiment(2, "Training 2",
                   f"{ai_text} The AI is not always right.\n\nYou will again see whether your answer was right.",
                   task(2, "Training with AI", mazes[2:4], "correctness_only", True, with_explanation)),
        experiment(3, "Final phase",
                   f"{ai_text}\n\nFrom now on you will **not** get any feedback.",
                   task(3, "Final task", mazes[4:6], "none", True, with_explanation)),
    ]
    return {
        "id": f"protocol-{letter}",
        "title": f"Maze study, group {letter} ({'explanation' if with_explanation else 'prediction'}, {difficulty})",
        "completion": {"message": "Thank you for taking part in this study!", "redirect_url": None},
        "elements": [DEMOGRAPHICS, *phases, FINAL_QUESTIONNAIRE],
    }


def main():
    rng = random.Random(20250101)
    difficult = build_set("hard", [21, 21, 23, 23, 25, 25], rng)
    easy_medium = build_set("easymed", [9, 13, 9, 13, 9, 13], rng)
    specs = {
        "A": protocol("A", difficult, False, "difficult"),
        "B": protocol("B", difficult, True, "difficult"),
        "C": protocol("C", easy_medium, False, "easy/medium"),
        "D": protocol("D", easy_medium, True, "easy/medium"),
    }
    for letter, spec in specs.items():
        (HERE / f"protocol-{letter}.json").write_text(json.dumps(spec, indent=2, ensure_ascii=False) + "\n")

    users = []
    for i in range(40):
        letter = "ABCD"[i // 10]
        code = "".join(rng.choice("abcdefghjkmnpqrstuvwxyz23456789") for _ in range(10))
        users.append({"login": f"u{i + 1:03d}", "access_code": code, "protocol": f"protocol-{letter}"})
    (HERE / "users.json").write_text(json.dumps(users, indent=2) + "\n")


if __name__ == "__main__":
    main()
