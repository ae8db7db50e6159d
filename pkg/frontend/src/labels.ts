/**
 * Label-edit semantics, mirrored exactly from the server so optimistic
 * local edits and the server's recomputation agree byte for byte.
 *
 * Labels are 0-based class indices in memory (the wire uses 1-based ids;
 * the API layer shifts). Ties in the majority vote go to the lowest class
 * id, matching the server.
 */

export const NUM_CLASSES = 18;

/** Assign one class to every selected point; the rest is untouched. */
export function relabel(
  labels: Int32Array,
  selection: ArrayLike<number>,
  classId: number,
): Int32Array {
  if (classId < 0 || classId >= NUM_CLASSES || !Number.isInteger(classId)) {
    throw new RangeError(`class id ${classId} outside 0..${NUM_CLASSES - 1}`);
  }
  const out = labels.slice();
  for (let i = 0; i < selection.length; i++) {
    const index = selection[i];
    if (index < 0 || index >= labels.length) {
      throw new RangeError(`selection index ${index} outside the scan`);
    }
    out[index] = classId;
  }
  return out;
}

/** The selection's modal class, ties resolved to the lowest class id. */
export function majorityClass(
  labels: Int32Array,
  selection: ArrayLike<number>,
): number {
  if (selection.length === 0) {
    throw new RangeError("majority vote needs a nonempty selection");
  }
  const counts = new Int32Array(NUM_CLASSES);
  for (let i = 0; i < selection.length; i++) {
    const index = selection[i];
    if (index < 0 || index >= labels.length) {
      throw new RangeError(`selection index ${index} outside the scan`);
    }
    counts[labels[index]] += 1;
  }
  let winner = 0;
  for (let cls = 1; cls < NUM_CLASSES; cls++) {
    if (counts[cls] > counts[winner]) {
      winner = cls; // strict '>' keeps the lowest id on ties
    }
  }
  return winner;
}

/** Set every selected point to the selection's modal class. */
export function majorityVote(
  labels: Int32Array,
  selection: ArrayLike<number>,
): Int32Array {
  return relabel(labels, selection, majorityClass(labels, selection));
}
