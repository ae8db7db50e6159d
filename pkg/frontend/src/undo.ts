/**
 * Undo stack over label edits.
 *
 * Invariant: replaying the recorded edits over the base labels always
 * reproduces the current label vector exactly, so undo/redo can never
 * drift from what the server saw.
 */

import { majorityVote, relabel } from "./labels.js";

export type Edit =
  | { kind: "relabel"; selection: number[]; classId: number }
  | { kind: "majority_vote"; selection: number[] }
  | { kind: "replace"; labels: Int32Array };

export function applyEdit(labels: Int32Array, edit: Edit): Int32Array {
  switch (edit.kind) {
    case "relabel":
      return relabel(labels, edit.selection, edit.classId);
    case "majority_vote":
      return majorityVote(labels, edit.selection);
    case "replace":
      return edit.labels.slice();
  }
}

export class UndoStack {
  private base: Int32Array;
  private edits: Edit[] = [];
  private cursor = 0; // edits[0..cursor) are applied

  constructor(base: Int32Array) {
    this.base = base.slice();
  }

  get current(): Int32Array {
    let labels = this.base;
    for (let i = 0; i < this.cursor; i++) {
      labels = applyEdit(labels, this.edits[i]);
    }
    return labels;
  }

  get canUndo(): boolean {
    return this.cursor > 0;
  }

  get canRedo(): boolean {
    return this.cursor < this.edits.length;
  }

  /** Record an edit and return the labels after it. */
  push(edit: Edit): Int32Array {
    this.edits.length = this.cursor; // drop any redo tail
    this.edits.push(edit);
    this.cursor += 1;
    return this.current;
  }

  undo(): Int32Array {
    if (this.canUndo) this.cursor -= 1;
    return this.current;
  }

  redo(): Int32Array {
    if (this.canRedo) this.cursor += 1;
    return this.current;
  }

  /** Rebase on server-acknowledged labels (e.g. after a refinement). */
  reset(labels: Int32Array): void {
    this.base = labels.slice();
    this.edits = [];
    this.cursor = 0;
  }
}
