/**
 * Annotation session state: the current scan, its label field with undo,
 * the pending selection, and the edit lock held during refinement.
 *
 * Mutations go through this class so every local edit mirrors the server's
 * semantics (same helpers) and is journaled for undo. Rendering reads
 * state; it never writes labels.
 */

import { AnnotationClient, RefinementReport, ScanPoints } from "./api.js";
import { majorityClass } from "./labels.js";
import {
  CameraPose,
  DepthTestOptions,
  DEFAULT_DEPTH_TEST,
  lassoSelect,
  Viewport,
} from "./lasso.js";
import { UndoStack } from "./undo.js";

export type OverlayMode = "texture" | "labels" | "attention";

export class ViewState {
  camera: CameraPose = {
    eye: [0, 1.0, 2.6],
    target: [0, 0.9, 0],
    up: [0, 1, 0],
    fovYDegrees: 45,
    near: 0.01,
  };
  overlay: OverlayMode = "texture";
  activeClass = 0;
  selection: number[] = [];
  depthTest: DepthTestOptions = { ...DEFAULT_DEPTH_TEST };

  private undoStack: UndoStack | null = null;
  private labelsNow: Int32Array | null = null;
  private refineInFlight = false;
  private correctionsSinceRefine = 0;

  constructor(
    readonly client: AnnotationClient,
    public scanId: string | null = null,
    public points: ScanPoints | null = null,
  ) {}

  get labels(): Int32Array | null {
    return this.labelsNow;
  }

  get editsLocked(): boolean {
    return this.refineInFlight;
  }

  get hasPendingCorrections(): boolean {
    return this.correctionsSinceRefine > 0;
  }

  async loadScan(scanId: string): Promise<void> {
    this.scanId = scanId;
    this.points = await this.client.fetchPoints(scanId);
    this.selection = [];
    this.labelsNow = null;
    this.undoStack = null;
    this.correctionsSinceRefine = 0;
  }

  async segment(): Promise<Int32Array> {
    if (!this.scanId) throw new Error("no scan loaded");
    const result = await this.client.segment(this.scanId);
    this.labelsNow = result.labels;
    this.undoStack = new UndoStack(result.labels);
    this.correctionsSinceRefine = 0;
    return result.labels;
  }

  /** Lasso-select against the full point set. */
  select(polygon: number[], viewport: Viewport): number[] {
    if (!this.points) throw new Error("no scan loaded");
    const positions = Float64Array.from(this.points.positions);
    this.selection = lassoSelect(
      positions,
      polygon,
      this.camera,
      viewport,
      this.depthTest,
    );
    return this.selection;
  }

  /**
   * Apply a relabel or majority-vote edit: optimistic local apply with the
   * exact server semantics, then the server call; a rejection rolls the
   * local state back via the undo stack.
   */
  async applyEdit(kind: "relabel" | "majority_vote"): Promise<Int32Array> {
    if (!this.scanId || !this.labelsNow || !this.undoStack) {
      throw new Error("segment the scan before editing");
    }
    if (this.editsLocked) throw new Error("edits are locked during refinement");
    if (this.selection.length === 0) throw new Error("empty selection");
    const classId =
      kind === "relabel"
        ? this.activeClass
        : majorityClass(this.labelsNow, this.selection);
    const selection = [...this.selection];
    const optimistic = this.undoStack.push({
      kind: "relabel",
      selection,
      classId,
    });
    this.labelsNow = optimistic;
    try {
      this.correctionsSinceRefine = await this.client.correctLabels(
        this.scanId,
        selection,
        classId,
      );
    } catch (error) {
      this.labelsNow = this.undoStack.undo(); // roll back the local apply
      throw error;
    }
    return this.labelsNow;
  }

  undo(): Int32Array | null {
    if (!this.undoStack) return null;
    this.labelsNow = this.undoStack.undo();
    return this.labelsNow;
  }

  /**
   * Run a refinement round: edits lock while the request is in flight,
   * then the scan is re-segmented and the diff against the pre-refinement
   * labels is reported (changed points highlight the model's movement).
   */
  async triggerRefine(
    options: { lambdas?: Record<string, number>; layers?: string[] } = {},
  ): Promise<{ report: RefinementReport; changed: number[] }> {
    if (!this.scanId || !this.labelsNow) {
      throw new Error("segment the scan before refining");
    }
    if (!this.hasPendingCorrections) {
      throw new Error("no corrections since the last refinement");
    }
    if (this.refineInFlight) throw new Error("refinement already in flight");
    this.refineInFlight = true;
    const before = this.labelsNow.slice();
    try {
      const report = await this.client.refine(this.scanId, options);
      const after = await this.client.segment(this.scanId);
      this.labelsNow = after.labels;
      this.undoStack = new UndoStack(after.labels);
      this.correctionsSinceRefine = 0;
      const changed: number[] = [];
      for (let i = 0; i < after.labels.length; i++) {
        if (after.labels[i] !== before[i]) changed.push(i);
      }
      return { report, changed };
    } finally {
      this.refineInFlight = false;
    }
  }
}
