/**
 * Error taxonomy shared by the CLI and the library entry points.
 *
 * Each error carries a stable machine-readable `kind` and an `exitCode`;
 * the CLI prints `{"error": kind, "message": ...}` as a single line on
 * stderr and exits with that code.  Input and validation problems exit 2.
 */

export class ExtractError extends Error {
  kind = "Error";
  exitCode = 2;

  payload(): { error: string; message: string } {
    return { error: this.kind, message: this.message };
  }
}

/** A requested encoder cannot be instantiated (no bundled weights, or unknown name). */
export class ModelLoadFailure extends ExtractError {
  override kind = "ModelLoadFailure";
}

/** An image file could not be decoded.  Callers skip the file and log; the
 * sample is excluded from every model consistently. */
export class UndecodableImage extends ExtractError {
  override kind = "UndecodableImage";
}

/** A class folder, class list, or image set is empty. */
export class EmptyInput extends ExtractError {
  override kind = "EmptyInput";
}

/** A referenced file or directory does not exist. */
export class MissingInput extends ExtractError {
  override kind = "TruncatedFile";
}

/** The prompt template lacks the `{}` class-name placeholder. */
export class BadTemplate extends ExtractError {
  override kind = "BadTemplate";
}

/** The command line itself is malformed (unknown command or option, missing
 * required option). */
export class UsageError extends ExtractError {
  override kind = "UsageError";
}

/** Row/column counts or dimensions disagree. */
export class DimensionMismatch extends ExtractError {
  override kind = "DimensionMismatch";
}

/** A row or column that must be unit norm is not. */
export class NormViolation extends ExtractError {
  override kind = "NormViolation";
}
