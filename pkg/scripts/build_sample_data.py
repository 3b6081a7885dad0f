"""Regenerate the bundled sample dataset under src/bugscribe/data/sample.

Three small simulated apps are explored by scripted walks, the walks become
trace files, and the models are built from those traces with the library
itself. Ten bug reports come with hand-written ground truth and manual OB/EB
assessments. No live LLM is available offline, so the replay fixtures are
recorded in ``record`` mode against :class:`ScriptedModel`, a deterministic
stand-in whose answers are written out below per report. Goldens and the
manifest are derived from the recorded run and frozen.

Run: python3 scripts/build_sample_data.py
"""
from __future__ import annotations

import json
import re
import shutil
import sys
import tempfile
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from bugscribe.context import build_catalog  # noqa: E402
from bugscribe.evaluation import ELEMENTS, QUALITY_LABELS, assessment_to_json, ElementAssessment  # noqa: E402
from bugscribe.execution_model import (  # noqa: E402
    LAUNCHER,
    Node,
    Snapshot,
    Trace,
    TraceEvent,
    UiComponent,
    build_model,
    screen_identity,
    serialize_model,
    trace_to_json,
)
from bugscribe.gateway import CompletionRequest, Gateway, render_prompt, load_template  # noqa: E402
from bugscribe.generation import ContextConfig, s2r_request, run_pipeline  # noqa: E402
from bugscribe.jsonio import atomic_write_text, pretty_json, write_json  # noqa: E402
from bugscribe.report_model import (  # noqa: E402
    AtomicStep,
    BugReport,
    EbDescription,
    GroundTruth,
    ObDescription,
    ground_truth_to_json,
    split_sentences,
)

OUT = ROOT / "src" / "bugscribe" / "data" / "sample"

# ------------------------------------------------------------------ UI DSL


@dataclass
class C:
    kind: str
    label: str = ""
    rid: str = ""
    desc: str = ""
    children: tuple = ()


def C_(kind, label="", rid="", desc="", *children):
    return C(kind, label, rid, desc, tuple(children))


def snapshot(activity: str, *items: C, dialog: bool = False) -> Snapshot:
    nodes: list[Node] = []
    width, row = (900, 0) if dialog else (1080, 0)

    def add(c: C, parent):
        nonlocal row
        top = 120 * len(nodes)
        comp = UiComponent(c.kind, c.rid, c.label, c.desc, (0, top, width, top + 110))
        nodes.append(Node(comp, parent))
        me = len(nodes) - 1
        for child in c.children:
            add(child, me)

    add(C("layout", rid="content", children=items), None)
    return Snapshot(tuple(nodes), activity, dialog)


@dataclass
class App:
    app_id: str
    name: str
    package: str
    screens: dict[str, Snapshot]
    # (source key, action, selector, input text, target key)
    transitions: list[tuple]
    descriptions: dict[str, str]
    initial: str
    model: object = None
    sid: dict[str, str] = field(default_factory=dict)

    def component(self, key: str, selector: str) -> UiComponent:
        for node in self.screens[key].hierarchy:
            c = node.component
            if selector in (c.label, c.content_description, c.resource_id):
                return c
        raise KeyError(f"{self.app_id}: no component {selector!r} on {key}")


# -------------------------------------------------------------- ATimeTracker

ATT = "com.markuspage.android.atimetracker"
atimetracker = App(
    "atimetracker",
    "ATimeTracker",
    ATT,
    screens={
        "tasks": snapshot(
            f"{ATT}.Tasks",
            C_("toolbar", "ATimeTracker", "toolbar", "",
               C("image-button", desc="Add task", rid="add_task"),
               C("image-button", desc="More options", rid="overflow")),
            C_("list", "", "task_list", "",
               C("list-item", "Reading", "task_row"),
               C("list-item", "Exercise", "task_row")),
            C("text", "Total: 3:45", "total"),
        ),
        "options": snapshot(
            f"{ATT}.Tasks",
            C("menu-item", "Change date range"),
            C("menu-item", "Export to CSV"),
            C("menu-item", "Backup to SD card"),
            C("menu-item", "Restore from backup"),
            C("menu-item", "Preferences"),
            dialog=True,
        ),
        "date_range": snapshot(
            f"{ATT}.Tasks",
            C("text", "Show times for", "title"),
            C("radio-button", "Today"),
            C("radio-button", "This week"),
            C("radio-button", "This month"),
            C("radio-button", "All"),
            dialog=True,
        ),
        "export_done": snapshot(
            f"{ATT}.Tasks",
            C("text", "Exported to /sdcard/atimetracker/export.csv", "message"),
            C("button", "OK", "button1"),
            dialog=True,
        ),
        "backup_done": snapshot(
            f"{ATT}.Tasks",
            C("text", "Backup written to SD card", "message"),
            C("button", "OK", "button1"),
            dialog=True,
        ),
        "crash": snapshot(
            "com.android.server.am.AppErrorDialog",
            C("text", "ATimeTracker has stopped", "alertTitle"),
            C("button", "OK", "aerr_close"),
            dialog=True,
        ),
        "preferences": snapshot(
            f"{ATT}.Preferences",
            C("text", "Preferences", "title"),
            C("checkbox", "Alternate row colors"),
            C("checkbox", "Use military time"),
            C("checkbox", "Concurrent timers"),
            C("list-item", "Week start day"),
        ),
        "add_task": snapshot(
            f"{ATT}.Tasks",
            C("text", "New task", "title"),
            C("text-field", "", "task_name", "Task name"),
            C("button", "OK", "button1"),
            C("button", "Cancel", "button2"),
            dialog=True,
        ),
        "task_menu": snapshot(
            f"{ATT}.Tasks",
            C("menu-item", "Edit task"),
            C("menu-item", "Delete task"),
            C("menu-item", "Show times"),
            dialog=True,
        ),
        "delete_confirm": snapshot(
            f"{ATT}.Tasks",
            C("text", "Delete task?", "message"),
            C("button", "Delete", "button1"),
            C("button", "Cancel", "button2"),
            dialog=True,
        ),
        "edit_task": snapshot(
            f"{ATT}.Tasks",
            C("text", "Edit task", "title"),
            C("text-field", "", "task_name", "Task name"),
            C("button", "OK", "button1"),
            dialog=True,
        ),
        "show_times": snapshot(
            f"{ATT}.Report",
            C("text", "Times", "title"),
            C_("list", "", "time_list", "",
               C("list-item", "Mon 09:00 - 10:30", "time_row"),
               C("list-item", "Tue 14:15 - 15:00", "time_row")),
            C("image-button", desc="Add time entry", rid="add_time"),
        ),
    },
    transitions=[
        (LAUNCHER, "open-app", None, None, "tasks"),
        ("tasks", "tap", "More options", None, "options"),
        ("tasks", "tap", "Add task", None, "add_task"),
        ("tasks", "tap", "Reading", None, "tasks"),
        ("tasks", "long-tap", "Reading", None, "task_menu"),
        ("tasks", "long-tap", "Exercise", None, "task_menu"),
        ("tasks", "rotate", None, None, "tasks"),
        ("options", "tap", "Change date range", None, "date_range"),
        ("options", "tap", "Export to CSV", None, "export_done"),
        ("options", "tap", "Backup to SD card", None, "backup_done"),
        ("options", "tap", "Restore from backup", None, "crash"),
        ("options", "tap", "Preferences", None, "preferences"),
        ("options", "back", None, None, "tasks"),
        ("date_range", "tap", "This week", None, "tasks"),
        ("date_range", "tap", "All", None, "tasks"),
        ("export_done", "tap", "OK", None, "tasks"),
        ("backup_done", "tap", "OK", None, "tasks"),
        ("preferences", "tap", "Use military time", None, "preferences"),
        ("preferences", "tap", "Concurrent timers", None, "preferences"),
        ("preferences", "back", None, None, "tasks"),
        ("add_task", "type", "task_name", "Reading", "add_task"),
        ("add_task", "tap", "OK", None, "tasks"),
        ("add_task", "tap", "Cancel", None, "tasks"),
        ("task_menu", "tap", "Edit task", None, "edit_task"),
        ("task_menu", "tap", "Delete task", None, "delete_confirm"),
        ("task_menu", "tap", "Show times", None, "show_times"),
        ("delete_confirm", "tap", "Delete", None, "tasks"),
        ("delete_confirm", "tap", "Cancel", None, "tasks"),
        ("edit_task", "tap", "OK", None, "tasks"),
        ("show_times", "back", None, None, "tasks"),
    ],
    descriptions={
        "tasks": "This screen is the main task list of ATimeTracker. It shows one row per task (Reading, Exercise) with its tracked time, a running total at the bottom, and toolbar buttons to add a task and to open more options. Tapping a task starts or stops its timer, and a long press opens the task's context menu. It is a full screen.",
        "options": "This popup menu offers the task list's extra options: Change date range, Export to CSV, Backup to SD card, Restore from backup and Preferences. It is shown as a dialog over the main task list.",
        "date_range": "This dialog lets the user choose the period whose times are shown: Today, This week, This month or All. It is displayed over the task list.",
        "export_done": "This dialog confirms that the times were exported to a CSV file on the SD card and names the file path. It has a single OK button and appears over the task list.",
        "backup_done": "This dialog confirms that a backup of the task database was written to the SD card. It has a single OK button and appears over the task list.",
        "crash": "This is the Android system error dialog reporting that ATimeTracker has stopped. It only offers an OK button that closes the app. It appears over whatever screen was visible when the app crashed.",
        "preferences": "This screen holds the app preferences: checkboxes for alternate row colors, military (24-hour) time and concurrent timers, plus the week start day setting. It is a full screen reached from the options menu.",
        "add_task": "This dialog creates a new task. It has a task name text field with OK and Cancel buttons and is shown over the task list.",
        "task_menu": "This context menu belongs to a single task and offers Edit task, Delete task and Show times. It appears as a dialog after a long press on a task row.",
        "delete_confirm": "This dialog asks the user to confirm deleting a task, with Delete and Cancel buttons. It is shown over the task list.",
        "edit_task": "This dialog renames an existing task through a task name text field and an OK button. It appears over the task list.",
        "show_times": "This screen lists the recorded time entries of one task, each with day, start and end time, and has a button to add a time entry. It is a full screen.",
    },
    initial="tasks",
)

# ---------------------------------------------------------------- MiniNotes

MN = "org.example.mininotes"
mininotes = App(
    "mininotes",
    "MiniNotes",
    MN,
    screens={
        "notes": snapshot(
            f"{MN}.NotesActivity",
            C_("toolbar", "Notes", "toolbar", "",
               C("image-button", desc="Search", rid="action_search"),
               C("image-button", desc="More options", rid="overflow")),
            C_("list", "", "notes_list", "",
               C("list-item", "Groceries", "note_row"),
               C("list-item", "Ideas", "note_row")),
            C("image-button", desc="New note", rid="fab_new"),
        ),
        "editor": snapshot(
            f"{MN}.EditorActivity",
            C("text-field", "", "note_title", "Title"),
            C("text-field", "", "note_body", "Note"),
            C("image-button", desc="Save", rid="action_save"),
            C("image-button", desc="Share", rid="action_share"),
            C("image-button", desc="Delete", rid="action_delete"),
        ),
        "delete_dialog": snapshot(
            f"{MN}.EditorActivity",
            C("text", "Delete this note?", "message"),
            C("button", "Delete", "button1"),
            C("button", "Cancel", "button2"),
            dialog=True,
        ),
        "search": snapshot(
            f"{MN}.SearchActivity",
            C("text-field", "", "search_query", "Search notes"),
            C("text", "No results", "empty"),
        ),
        "overflow": snapshot(
            f"{MN}.NotesActivity",
            C("menu-item", "Sort by title"),
            C("menu-item", "Sort by date"),
            C("menu-item", "Settings"),
            dialog=True,
        ),
        "settings": snapshot(
            f"{MN}.SettingsActivity",
            C("text", "Settings", "title"),
            C("switch", "Dark theme"),
            C("switch", "Auto save"),
            C("list-item", "Font size"),
        ),
        "font_size": snapshot(
            f"{MN}.SettingsActivity",
            C("text", "Font size", "title"),
            C("radio-button", "Small"),
            C("radio-button", "Medium"),
            C("radio-button", "Large"),
            dialog=True,
        ),
        "crash": snapshot(
            "com.android.server.am.AppErrorDialog",
            C("text", "MiniNotes has stopped", "alertTitle"),
            C("button", "Close app", "aerr_close"),
            dialog=True,
        ),
    },
    transitions=[
        (LAUNCHER, "open-app", None, None, "notes"),
        ("notes", "tap", "New note", None, "editor"),
        ("notes", "tap", "Groceries", None, "editor"),
        ("notes", "tap", "Ideas", None, "editor"),
        ("notes", "tap", "Search", None, "search"),
        ("notes", "tap", "More options", None, "overflow"),
        ("editor", "type", "note_title", "Shopping", "editor"),
        ("editor", "type", "note_body", "Milk", "editor"),
        ("editor", "tap", "Save", None, "notes"),
        ("editor", "tap", "Delete", None, "delete_dialog"),
        ("editor", "tap", "Share", None, "crash"),
        ("editor", "rotate", None, None, "editor"),
        ("editor", "back", None, None, "notes"),
        ("delete_dialog", "tap", "Delete", None, "notes"),
        ("delete_dialog", "tap", "Cancel", None, "editor"),
        ("search", "type", "search_query", "milk", "search"),
        ("search", "back", None, None, "notes"),
        ("overflow", "tap", "Sort by title", None, "notes"),
        ("overflow", "tap", "Settings", None, "settings"),
        ("settings", "tap", "Dark theme", None, "settings"),
        ("settings", "tap", "Font size", None, "font_size"),
        ("settings", "back", None, None, "notes"),
        ("font_size", "tap", "Large", None, "settings"),
        ("font_size", "tap", "Small", None, "settings"),
    ],
    descriptions={
        "notes": "This screen is the note list of MiniNotes, showing one row per note (Groceries, Ideas). The toolbar has Search and More options buttons, and a floating button creates a new note. It is a full screen and the app's start screen.",
        "editor": "This screen edits a single note, with a title field and a body field. Toolbar buttons save, share or delete the note. It is a full screen opened from the note list.",
        "delete_dialog": "This dialog asks whether to delete the current note, with Delete and Cancel buttons. It appears over the note editor.",
        "search": "This screen searches the notes: it has a search text field and a result area that currently reads No results. It is a full screen.",
        "overflow": "This popup menu of the note list offers Sort by title, Sort by date and Settings. It is displayed as a dialog over the list.",
        "settings": "This screen holds the app settings: switches for dark theme and auto save, and the font size option. It is a full screen.",
        "font_size": "This dialog chooses the note font size among Small, Medium and Large. It appears over the settings screen.",
        "crash": "This is the Android system dialog saying that MiniNotes has stopped, with a Close app button. It replaces the app's screen after a crash.",
    },
    initial="notes",
)

# ------------------------------------------------------------- PocketBudget

PB = "org.example.pocketbudget"
pocketbudget = App(
    "pocketbudget",
    "PocketBudget",
    PB,
    screens={
        "overview": snapshot(
            f"{PB}.OverviewActivity",
            C("text", "Balance", "balance_label"),
            C("text", "", "balance_value"),
            C("button", "Add expense", "add_expense"),
            C("button", "Add income", "add_income"),
            C("image-button", desc="Charts", rid="action_charts"),
            C("image-button", desc="Settings", rid="action_settings"),
            C_("list", "", "entries", "",
               C("list-item", "Coffee", "entry_row"),
               C("list-item", "Rent", "entry_row")),
        ),
        "add_expense": snapshot(
            f"{PB}.EntryActivity",
            C("text", "New expense", "title"),
            C("text-field", "", "amount", "Amount"),
            C("text-field", "", "note", "Note"),
            C("button", "Category", "category"),
            C("button", "Save", "save"),
        ),
        "add_income": snapshot(
            f"{PB}.EntryActivity",
            C("text", "New income", "title"),
            C("text-field", "", "amount", "Amount"),
            C("button", "Save", "save"),
        ),
        "category_picker": snapshot(
            f"{PB}.EntryActivity",
            C("text", "Choose category", "title"),
            C("list-item", "Food"),
            C("list-item", "Transport"),
            C("list-item", "Housing"),
            dialog=True,
        ),
        "charts": snapshot(
            f"{PB}.ChartsActivity",
            C("text", "Spending by category", "title"),
            C("tab", "Month"),
            C("tab", "Year"),
            C("chart", "", "pie", "Pie chart"),
        ),
        "settings": snapshot(
            f"{PB}.SettingsActivity",
            C("text", "Settings", "title"),
            C("list-item", "Currency"),
            C("switch", "Round to whole numbers"),
        ),
        "currency": snapshot(
            f"{PB}.SettingsActivity",
            C("text", "Currency", "title"),
            C("radio-button", "EUR"),
            C("radio-button", "USD"),
            C("radio-button", "GBP"),
            dialog=True,
        ),
        "entry_detail": snapshot(
            f"{PB}.DetailActivity",
            C("text", "Coffee", "entry_name"),
            C("text", "", "entry_amount"),
            C("button", "Edit", "edit"),
            C("button", "Delete", "delete"),
        ),
    },
    transitions=[
        (LAUNCHER, "open-app", None, None, "overview"),
        ("overview", "tap", "Add expense", None, "add_expense"),
        ("overview", "tap", "Add income", None, "add_income"),
        ("overview", "tap", "Charts", None, "charts"),
        ("overview", "tap", "Settings", None, "settings"),
        ("overview", "tap", "Coffee", None, "entry_detail"),
        ("overview", "swipe", "entries", None, "overview"),
        ("add_expense", "type", "amount", "12.50", "add_expense"),
        ("add_expense", "type", "amount", "12,50", "add_expense"),
        ("add_expense", "type", "note", "Lunch", "add_expense"),
        ("add_expense", "tap", "Category", None, "category_picker"),
        ("add_expense", "tap", "Save", None, "overview"),
        ("add_expense", "back", None, None, "overview"),
        ("category_picker", "tap", "Food", None, "add_expense"),
        ("category_picker", "tap", "Transport", None, "add_expense"),
        ("add_income", "type", "amount", "1000", "add_income"),
        ("add_income", "tap", "Save", None, "overview"),
        ("charts", "tap", "Year", None, "charts"),
        ("charts", "tap", "Month", None, "charts"),
        ("charts", "back", None, None, "overview"),
        ("settings", "tap", "Currency", None, "currency"),
        ("settings", "tap", "Round to whole numbers", None, "settings"),
        ("settings", "back", None, None, "overview"),
        ("currency", "tap", "USD", None, "settings"),
        ("entry_detail", "tap", "Delete", None, "overview"),
        ("entry_detail", "back", None, None, "overview"),
    ],
    descriptions={
        "overview": "This screen is the PocketBudget overview. It shows the current balance, buttons to add an expense or an income, the list of recent entries (Coffee, Rent), and toolbar buttons for charts and settings. It is the app's full-screen start page.",
        "add_expense": "This screen is the new-expense form, with amount and note fields, a Category button that opens the category picker, and a Save button. It is a full screen.",
        "add_income": "This screen is the new-income form with an amount field and a Save button. It is a full screen.",
        "category_picker": "This dialog lets the user pick the category of an expense among Food, Transport and Housing. It appears over the expense form.",
        "charts": "This screen shows spending by category as a pie chart, with Month and Year tabs to choose the period. It is a full screen.",
        "settings": "This screen holds the budget settings: the currency option and a switch to round amounts to whole numbers. It is a full screen.",
        "currency": "This dialog selects the display currency among EUR, USD and GBP. It appears over the settings screen.",
        "entry_detail": "This screen shows one budget entry with its name and amount, and Edit and Delete buttons. It is a full screen.",
    },
    initial="overview",
)

APPS = {a.app_id: a for a in (atimetracker, mininotes, pocketbudget)}


# --------------------------------------------------------------- exploration


def _event(app: App, t: tuple) -> TraceEvent:
    src, action, sel, text, dst = t
    comp = app.component(src, sel) if sel else None
    before = None if src == LAUNCHER else app.screens[src]
    return TraceEvent(before, action, app.screens[dst], comp, text)


def explore(app: App) -> list[Trace]:
    """One automated walk per transition (shortest route to its source, then the transition)."""
    by_source: dict[str, list[tuple]] = {}
    for t in app.transitions:
        by_source.setdefault(t[0], []).append(t)
    route: dict[str, list[tuple]] = {LAUNCHER: []}
    queue = deque([LAUNCHER])
    while queue:
        cur = queue.popleft()
        for t in by_source.get(cur, []):
            if t[4] not in route:
                route[t[4]] = route[cur] + [t]
                queue.append(t[4])
    traces, covered = [], set()
    for t in app.transitions:
        if t in covered:
            continue
        walk = route[t[0]] + [t]
        covered.update(walk)
        traces.append(Trace(app.app_id, tuple(_event(app, s) for s in walk), "automated"))
    return traces


def edge(app: App, src: str, action: str, sel: str | None = None, text: str | None = None) -> str:
    source = LAUNCHER if src == LAUNCHER else app.sid[src]
    for e in app.model.interactions:
        if e.source != source or e.action != action or e.input_text != text:
            continue
        if sel is None or (e.component is not None and sel in (e.component.label, e.component.content_description, e.component.resource_id)):
            return e.id
    raise KeyError((app.app_id, src, action, sel, text))


# ------------------------------------------------------------------ reports


@dataclass
class Case:
    report: BugReport
    labels: list[str]
    gt_path: list[tuple]  # (src, action, selector, text)
    gt_ob: tuple[str, str, str]  # behavior, screen reference, trigger
    gt_eb: tuple[str, str, str]  # subject, modal, intended
    ranking: list[str]  # screen keys, or literal names prefixed with "?"
    s2r: list[tuple]
    obeb: dict
    assessment: dict[str, str]
    buggy: str
    first_s2r: list[tuple] | None = None  # rejected first answer, answered by a repair
    fenced: bool = False


OPEN = (LAUNCHER, "open-app", None, None)


def report(report_id: str, app_id: str, title: str, body: str, environment: str | None = None) -> BugReport:
    return BugReport(report_id, app_id, body, title, environment)

CASES = [
    Case(
        report(
            "atimetracker-35",
            "atimetracker",
            "Crash when restoring a backup",
            "The app crashes with the exception below when trying to restore a backup.\n\n"
            "java.lang.NullPointerException\n"
            "    at com.markuspage.android.atimetracker.Tasks.restore(Tasks.java:812)\n"
            "    at com.markuspage.android.atimetracker.Tasks.onMenuItemSelected(Tasks.java:640)\n\n"
            "This happens after selecting the menu item.\n"
            "I installed version 0.21 from F-Droid.",
            "ATimeTracker 0.21, Android 4.4.2, Nexus 5",
        ),
        labels=["OB", "OTHER", "OTHER", "OTHER", "S2R", "OTHER"],
        gt_path=[OPEN, ("tasks", "tap", "More options", None), ("options", "tap", "Restore from backup", None)],
        gt_ob=("the app crashes with a NullPointerException", "the extended options popup menu", "taps 'Restore from backup'"),
        gt_eb=("the app", "should", "restore the backup and confirm it instead of crashing"),
        ranking=["crash", "options", "backup_done", "tasks"],
        s2r=[OPEN, ("tasks", "tap", "More options", None), ("options", "tap", "Restore from backup", None)],
        obeb={
            "title": "App crashes when tapping 'Restore from backup' in the options menu",
            "ob": {
                "buggy_screen_reference": "the extended options popup menu",
                "triggering_interaction": "taps 'Restore from backup'",
                "buggy_behavior": "the app crashes with a NullPointerException",
            },
            "eb": {"subject": "The app", "modal": "should", "intended_behavior": "restore the backup from the SD card and show a confirmation instead of crashing"},
        },
        assessment={"buggy_behavior": "Correct", "triggering_interaction": "Correct", "buggy_screen_reference": "Correct", "intended_behavior": "Correct"},
        buggy="crash",
    ),
    Case(
        report(
            "atimetracker-12",
            "atimetracker",
            "Exported CSV is empty",
            "I have two tasks with several recorded times. "
            "When I use Export to CSV from the menu, the dialog says the file was exported but the file is empty. "
            "The CSV should contain one row per recorded time.",
        ),
        labels=["OTHER", "OB", "EB"],
        gt_path=[OPEN, ("tasks", "tap", "More options", None), ("options", "tap", "Export to CSV", None)],
        gt_ob=("the exported CSV file is empty", "the export confirmation dialog", "taps 'Export to CSV'"),
        gt_eb=("the exported file", "should", "contain one row per recorded time"),
        ranking=["export_done", "options", "tasks"],
        s2r=[OPEN, ("tasks", "tap", "More options", None), ("options", "tap", "Export to CSV", None)],
        obeb={
            "title": "Export to CSV writes an empty file",
            "ob": {
                "buggy_screen_reference": "the export confirmation dialog",
                "triggering_interaction": "taps 'Export to CSV' in the options menu",
                "buggy_behavior": "the confirmation reports success but the exported CSV file is empty",
            },
            "eb": {"subject": "The exported file", "modal": "should", "intended_behavior": "contain one row for every recorded time"},
        },
        assessment={"buggy_behavior": "Correct", "triggering_interaction": "Correct", "buggy_screen_reference": "Correct", "intended_behavior": "Correct"},
        buggy="export_done",
    ),
    Case(
        report(
            "atimetracker-21",
            "atimetracker",
            "Delete confirmation names the wrong task",
            "1. Long press a task\n"
            "2. Choose Delete task\n"
            "The confirmation dialog always refers to the first task of the list, not the one I pressed.\n"
            "It should ask about the selected task.",
        ),
        labels=["S2R", "S2R", "OB", "EB"],
        gt_path=[OPEN, ("tasks", "long-tap", "Exercise", None), ("task_menu", "tap", "Delete task", None)],
        gt_ob=("the dialog refers to the first task instead of the pressed one", "the delete confirmation dialog", "chooses 'Delete task'"),
        gt_eb=("the dialog", "should", "name the task that was long-pressed"),
        ranking=["delete_confirm", "task_menu", "tasks"],
        s2r=[OPEN, ("tasks", "long-tap", "Reading", None), ("task_menu", "tap", "Delete task", None)],
        obeb={
            "title": "Delete confirmation refers to the first task instead of the selected one",
            "ob": {
                "buggy_screen_reference": "the delete confirmation dialog",
                "triggering_interaction": "chooses 'Delete task' from the task's context menu",
                "buggy_behavior": "the dialog refers to the first task of the list",
            },
            "eb": {"subject": "The dialog", "modal": "should", "intended_behavior": "refer to the task that was long-pressed"},
        },
        assessment={"buggy_behavior": "Correct", "triggering_interaction": "Correct", "buggy_screen_reference": "Correct", "intended_behavior": "Correct"},
        buggy="delete_confirm",
    ),
    Case(
        report(
            "atimetracker-40",
            "atimetracker",
            "Military time setting ignored in the times list",
            "I enabled Use military time in the preferences. "
            "The list of times of a task still shows 12-hour times. "
            "Times there should use the 24-hour format as well.",
            "Android 7.0",
        ),
        labels=["S2R", "OB", "EB"],
        gt_path=[
            OPEN,
            ("tasks", "tap", "More options", None),
            ("options", "tap", "Preferences", None),
            ("preferences", "tap", "Use military time", None),
            ("preferences", "back", None, None),
            ("tasks", "long-tap", "Reading", None),
            ("task_menu", "tap", "Show times", None),
        ],
        gt_ob=("times are shown in 12-hour format", "the task's times list", "opens 'Show times'"),
        gt_eb=("the times list", "should", "use the 24-hour format when military time is enabled"),
        ranking=["preferences", "show_times", "tasks"],
        s2r=[
            OPEN,
            ("tasks", "tap", "More options", None),
            ("options", "tap", "Preferences", None),
            ("preferences", "tap", "Use military time", None),
        ],
        obeb={
            "title": "Military time preference is not applied",
            "ob": {
                "buggy_screen_reference": "the preferences screen",
                "triggering_interaction": "enables 'Use military time'",
                "buggy_behavior": "times are still shown in 12-hour format",
            },
            "eb": {"subject": "The app", "modal": "should", "intended_behavior": "show all times in 24-hour format once military time is enabled"},
        },
        assessment={"buggy_behavior": "Correct", "triggering_interaction": "Incomplete", "buggy_screen_reference": "Incorrect", "intended_behavior": "Correct"},
        buggy="show_times",
    ),
    Case(
        report(
            "mininotes-7",
            "mininotes",
            "Search ignores note bodies",
            "Search only matches note titles. "
            "Typing milk, which appears in the body of my Groceries note, gives No results. "
            "Notes whose body contains the query should be listed too.",
        ),
        labels=["OB", "OB", "EB"],
        gt_path=[OPEN, ("notes", "tap", "Search", None), ("search", "type", "search_query", "milk")],
        gt_ob=("no results are shown for text that appears in a note body", "the search screen", "types 'milk' in the search field"),
        gt_eb=("the search", "should", "list notes whose body contains the query"),
        ranking=["search", "notes", "editor"],
        s2r=[OPEN, ("notes", "tap", "Search", None), ("search", "type", "search_query", "milk")],
        obeb={
            "title": "Search finds nothing for words that only appear in a note body",
            "ob": {
                "buggy_screen_reference": "the search screen",
                "triggering_interaction": "types 'milk' in the search field",
                "buggy_behavior": "No results is shown although the Groceries note contains 'milk'",
            },
            "eb": {"subject": "The search", "modal": "should", "intended_behavior": "list notes whose body contains the query"},
        },
        assessment={"buggy_behavior": "Correct", "triggering_interaction": "Correct", "buggy_screen_reference": "Correct", "intended_behavior": "Correct"},
        buggy="search",
    ),
    Case(
        report(
            "mininotes-15",
            "mininotes",
            "Sharing a note crashes the app",
            "Open any note and press the share icon.\n"
            "The app closes immediately with MiniNotes has stopped.\n"
            "Sharing should open the Android share sheet.",
            "Pixel 6, Android 13",
        ),
        labels=["S2R", "OB", "EB"],
        gt_path=[OPEN, ("notes", "tap", "Groceries", None), ("editor", "tap", "Share", None)],
        gt_ob=("the app crashes", "the note editor", "taps the share button"),
        gt_eb=("the app", "should", "open the Android share sheet"),
        ranking=["crash", "editor", "notes"],
        first_s2r=[OPEN, ("notes", "tap", "Groceries", None)],
        s2r=[OPEN, ("notes", "tap", "Groceries", None), ("editor", "tap", "Share", None)],
        obeb={
            "title": "App crashes when sharing a note",
            "ob": {
                "buggy_screen_reference": "the note editor",
                "triggering_interaction": "taps the 'Share' button",
                "buggy_behavior": "the app crashes with 'MiniNotes has stopped'",
            },
            "eb": {"subject": "The app", "modal": "should", "intended_behavior": "open the Android share sheet"},
        },
        assessment={"buggy_behavior": "Correct", "triggering_interaction": "Correct", "buggy_screen_reference": "Correct", "intended_behavior": "Correct"},
        buggy="crash",
    ),
    Case(
        report(
            "mininotes-22",
            "mininotes",
            "Large font size not applied to the note list",
            "After setting Font size to Large in Settings and going back, the note list still uses the small font. "
            "The list should use the chosen font size.",
        ),
        labels=["OB", "EB"],
        gt_path=[
            OPEN,
            ("notes", "tap", "More options", None),
            ("overflow", "tap", "Settings", None),
            ("settings", "tap", "Font size", None),
            ("font_size", "tap", "Large", None),
            ("settings", "back", None, None),
        ],
        gt_ob=("the note list still uses the small font", "the note list", "goes back after choosing the Large font size"),
        gt_eb=("the list", "should", "use the chosen font size"),
        ranking=["notes", "settings", "font_size"],
        s2r=[
            OPEN,
            ("notes", "tap", "More options", None),
            ("overflow", "tap", "Settings", None),
            ("settings", "tap", "Dark theme", None),
            ("settings", "tap", "Font size", None),
            ("font_size", "tap", "Large", None),
            ("settings", "back", None, None),
        ],
        obeb={
            "title": "Note list ignores the Large font size setting",
            "ob": {
                "buggy_screen_reference": "the note list",
                "triggering_interaction": "returns from Settings",
                "buggy_behavior": "the notes are still displayed with the small font",
            },
            "eb": {"subject": "The note list", "modal": "should", "intended_behavior": "use the font size chosen in Settings"},
        },
        assessment={"buggy_behavior": "Correct", "triggering_interaction": "Ambiguous", "buggy_screen_reference": "Correct", "intended_behavior": "Correct"},
        buggy="notes",
        fenced=True,
    ),
    Case(
        report(
            "pocketbudget-3",
            "pocketbudget",
            "Amounts with a decimal comma are saved as zero",
            "1. Add expense\n"
            "2. Enter 12,50 as amount and save\n"
            "The new entry shows 0.00 on the overview. "
            "The amount should be read as 12.50.",
            "PocketBudget 2.3, Samsung Galaxy A52, Android 12",
        ),
        labels=["S2R", "S2R", "OB", "EB"],
        gt_path=[
            OPEN,
            ("overview", "tap", "Add expense", None),
            ("add_expense", "type", "amount", "12,50"),
            ("add_expense", "tap", "Save", None),
        ],
        gt_ob=("the saved expense shows 0.00", "the overview", "saves an expense with amount '12,50'"),
        gt_eb=("the amount", "should", "be stored as 12.50"),
        ranking=["add_expense", "overview", "entry_detail"],
        s2r=[OPEN, ("overview", "tap", "Add expense", None), ("add_expense", "type", "amount", "12,50")],
        obeb={
            "title": "Expense amount with a decimal comma becomes 0.00",
            "ob": {
                "buggy_screen_reference": "the new expense form",
                "triggering_interaction": "types '12,50' as the amount",
                "buggy_behavior": "the expense is saved with amount 0.00",
            },
            "eb": {"subject": "The app", "modal": "should", "intended_behavior": "accept a decimal comma and store 12.50"},
        },
        assessment={"buggy_behavior": "Correct", "triggering_interaction": "Incomplete", "buggy_screen_reference": "Incorrect", "intended_behavior": "Correct"},
        buggy="overview",
    ),
    Case(
        report(
            "pocketbudget-9",
            "pocketbudget",
            "Year chart shows only the current month",
            "The yearly chart only contains this month's spending. "
            "Go to Charts and switch to the Year tab. "
            "It should add up all expenses of the year.",
        ),
        labels=["OB", "S2R", "EB"],
        gt_path=[OPEN, ("overview", "tap", "Charts", None), ("charts", "tap", "Year", None)],
        gt_ob=("the chart only contains the current month's spending", "the charts screen", "selects the 'Year' tab"),
        gt_eb=("the chart", "should", "add up all expenses of the year"),
        ranking=["charts", "overview", "settings"],
        s2r=[OPEN, ("overview", "tap", "Charts", None), ("charts", "tap", "Year", None)],
        obeb={
            "title": "Year chart only shows the current month",
            "ob": {
                "buggy_screen_reference": "the charts screen",
                "triggering_interaction": "selects the 'Year' tab",
                "buggy_behavior": "the pie chart only contains the current month's spending",
            },
            "eb": {"subject": "The chart", "modal": "should", "intended_behavior": "add up all expenses of the year"},
        },
        assessment={"buggy_behavior": "Correct", "triggering_interaction": "Correct", "buggy_screen_reference": "Correct", "intended_behavior": "Correct"},
        buggy="charts",
    ),
    Case(
        report(
            "pocketbudget-14",
            "pocketbudget",
            "Selected category is lost",
            "The category I pick for a new expense is not kept and the form still shows no category. "
            "The chosen category should be shown on the form and stored with the expense.",
        ),
        labels=["OB", "EB"],
        gt_path=[
            OPEN,
            ("overview", "tap", "Add expense", None),
            ("add_expense", "tap", "Category", None),
            ("category_picker", "tap", "Food", None),
        ],
        gt_ob=("the form does not show the chosen category", "the new expense form", "picks a category"),
        gt_eb=("the form", "should", "show the chosen category and store it with the expense"),
        ranking=["add_expense", "?Category chooser", "category_picker", "overview"],
        s2r=[
            OPEN,
            ("overview", "tap", "Add expense", None),
            ("add_expense", "type", "amount", "12.50"),
            ("add_expense", "tap", "Category", None),
            ("category_picker", "tap", "Food", None),
        ],
        obeb={
            "title": "Chosen expense category is not kept",
            "ob": {
                "buggy_screen_reference": "the new expense form",
                "triggering_interaction": "picks 'Food' in the category dialog",
                "buggy_behavior": "the form still shows no category",
            },
            "eb": {"subject": "The form", "modal": "should", "intended_behavior": "show the chosen category and save it with the expense"},
        },
        assessment={"buggy_behavior": "Correct", "triggering_interaction": "Correct", "buggy_screen_reference": "Correct", "intended_behavior": "Correct"},
        buggy="add_expense",
    ),
]

# Hand-split sentence units of the motivating ATimeTracker report, written
# independently of the splitter.
RESTORE_CRASH_UNITS = [
    "The app crashes with the exception below when trying to restore a backup.",
    "java.lang.NullPointerException",
    "    at com.markuspage.android.atimetracker.Tasks.restore(Tasks.java:812)",
    "    at com.markuspage.android.atimetracker.Tasks.onMenuItemSelected(Tasks.java:640)",
    "This happens after selecting the menu item.",
    "I installed version 0.21 from F-Droid.",
]


# ------------------------------------------------------------ scripted model


class ScriptedModel:
    """Answers every prompt of the pipeline from the per-report scripts above."""

    def __init__(self) -> None:
        self.by_title = {c.report.title: c for c in CASES}
        self.desc_by_sid = {app.sid[k]: text for app in APPS.values() for k, text in app.descriptions.items()}

    def _case(self, text: str) -> Case:
        m = re.search(r"^Title: (.+)$", text, re.M)
        return self.by_title[m.group(1).strip()]

    def _steps(self, case: Case, path) -> str:
        app = APPS[case.report.app_id]
        return json.dumps({"steps": [edge(app, *s) for s in path]})

    def __call__(self, prompt: str, request: CompletionRequest) -> str:
        b = request.bindings
        tid = request.template_id
        if tid == "annotate":
            case = self.by_title[b["title"]]
            return json.dumps([{"index": i, "label": label} for i, label in enumerate(case.labels)])
        if tid == "describe_screen":
            sid = re.search(r"^id: (\S+)$", b["screen"], re.M).group(1)
            return self.desc_by_sid[sid]
        if tid == "localize":
            case = self._case(b["bug_report"])
            app = APPS[case.report.app_id]
            ranked = []
            for key in case.ranking:
                sid = key[1:] if key.startswith("?") else app.sid[key]
                why = "matches the reported symptom" if not ranked else "reached on the way to the reported symptom"
                ranked.append({"screen_id": sid, "rationale": why})
            text = json.dumps({"ranking": ranked})
            return f"Here is the ranking:\n```json\n{text}\n```" if case.fenced else text
        if tid.startswith("s2r_"):
            case = self._case(b["bug_report"])
            return self._steps(case, case.first_s2r or case.s2r)
        if tid.startswith("obeb_"):
            return json.dumps(self._case(b["bug_report"]).obeb)
        if tid == "repair":
            case = self._case(b["original_prompt"])
            return self._steps(case, case.s2r)
        raise KeyError(f"no scripted answer for template {tid}")


# -------------------------------------------------------------------- build


def build_apps() -> dict:
    counts = {}
    for app in APPS.values():
        for key, snap in app.screens.items():
            app.sid[key] = screen_identity(snap.hierarchy, snap.activity_name, snap.is_dialog)
        traces = explore(app)
        # a short manual session that repeats known interactions
        manual = Trace(app.app_id, tuple(_event(app, t) for t in app.transitions[:1]), "manual")
        traces.append(manual)
        app.model = build_model(app.app_id, traces)
        assert app.model.initial_screen == app.sid[app.initial]
        assert len(app.model.interactions) == len(app.transitions), app.app_id
        base = OUT / "apps" / app.app_id
        for i, trace in enumerate(traces, 1):
            write_json(base / "traces" / f"trace-{i:02d}.json", trace_to_json(trace))
        atomic_write_text(base / "model.json", serialize_model(app.model))
        counts[app.app_id] = {
            "screens": len(app.model.screens),
            "interactions": len(app.model.interactions),
            "traces": len(traces),
        }
    return counts


def build_reports() -> None:
    for case in CASES:
        r = case.report
        units = split_sentences(r.body)
        assert len(units) == len(case.labels), (r.report_id, units)
        write_json(OUT / "reports" / f"{r.report_id}.json", r.to_json())
        app = APPS[r.app_id]
        steps = []
        for i, s in enumerate(case.gt_path, 1):
            steps.append(AtomicStep.grounded(i, app.model.interaction(edge(app, *s))))
        gt = GroundTruth(
            r.report_id,
            tuple(steps),
            app.sid[case.buggy],
            ObDescription.from_elements(*case.gt_ob),
            EbDescription.from_parts(*case.gt_eb),
            r.app_id,
        )
        gt.check(app.model)
        write_json(OUT / "apps" / r.app_id / "ground_truth" / f"{r.report_id}.json", ground_truth_to_json(gt))
        labels = [ElementAssessment(e, case.assessment[e]) for e in ELEMENTS]
        write_json(OUT / "assessments" / f"{r.report_id}.json", assessment_to_json(r.report_id, labels))


def record_fixtures() -> None:
    fixtures = OUT / "fixtures"
    shutil.rmtree(fixtures, ignore_errors=True)
    gw = Gateway(mode="record", fixtures=fixtures, provider=ScriptedModel(), force=True)
    for case in CASES:
        run_pipeline(case.report, APPS[case.report.app_id].model, ContextConfig(), gw, jobs=1)
    print(f"recorded {gw.live_calls} fixtures")


def build_goldens(counts: dict) -> None:
    from bugscribe.cli import main

    golden = OUT / "golden"
    shutil.rmtree(golden, ignore_errors=True)
    with tempfile.TemporaryDirectory() as tmp:
        status = main(["pipeline-all", "--data", str(OUT), "--out", tmp])
        assert status == 0, status
        run = Path(tmp)
        for case in CASES:
            rid = case.report.report_id
            for sub in ("reports", "scorecards"):
                (golden / sub).mkdir(parents=True, exist_ok=True)
            shutil.copy(run / "reports" / f"{rid}.md", golden / "reports" / f"{rid}.md")
            shutil.copy(run / "scorecards" / f"{rid}.json", golden / "scorecards" / f"{rid}.json")
        cards = {case.report.report_id: json.loads((run / "scorecards" / f"{case.report.report_id}.json").read_text()) for case in CASES}

    write_json(golden / "atimetracker-35_sentences.json", {"report_id": "atimetracker-35", "units": RESTORE_CRASH_UNITS})
    app = APPS["atimetracker"]
    write_json(golden / "atimetracker_catalog.json", build_catalog(app.model).to_json())
    snap = app.screens["export_done"]
    write_json(
        golden / "screen_identity.json",
        {
            "activity": snap.activity_name,
            "is_dialog": snap.is_dialog,
            "hierarchy": [{**n.component.to_json(), "parent": n.parent} for n in snap.hierarchy],
            "screen_id": app.sid["export_done"],
        },
    )
    # rendered S2R prompt for the motivating report, default config
    from bugscribe.annotation import classify_sentences
    from bugscribe.context import describe_all, localize_buggy_screen

    gw = Gateway(fixtures=OUT / "fixtures")
    case = CASES[0]
    labeled = classify_sentences(case.report, gw)
    desc = describe_all(app.model, gw, 1)
    catalog = build_catalog(app.model)
    ranking = localize_buggy_screen(labeled, desc, catalog, gw)
    request = s2r_request(labeled, catalog, desc, ranking, ContextConfig())
    atomic_write_text(golden / "atimetracker-35_s2r_prompt.txt", render_prompt(load_template(request.template_id), request.bindings))

    # Manifest counts are tallied straight from the hand-written tables above.
    element_counts = {e: {label: 0 for label in QUALITY_LABELS} for e in ELEMENTS}
    for case in CASES:
        for e, label in case.assessment.items():
            element_counts[e][label] += 1
    buggy = {c.report.report_id: APPS[c.report.app_id].sid[c.buggy] for c in CASES}
    manifest = {
        "apps": counts,
        "reports": [c.report.report_id for c in CASES],
        "buggy_screens": buggy,
        "localization_hits": sum(1 for c in CASES if c.ranking[0] == c.buggy),
        "element_counts": element_counts,
        "step_counts": {rid: {k: card["steps"][k] for k in ("cs", "es", "ms")} for rid, card in cards.items()},
    }
    write_json(OUT / "manifest.json", manifest)


def main() -> None:
    for sub in ("apps", "reports", "assessments"):
        shutil.rmtree(OUT / sub, ignore_errors=True)
    counts = build_apps()
    build_reports()
    record_fixtures()
    build_goldens(counts)
    print(pretty_json(json.loads((OUT / "manifest.json").read_text()))[:2000])


if __name__ == "__main__":
    main()
