/**
 * Registration form model: values, per-field validation state, and the
 * submit flow. Pure data in, view transition out; the DOM layer only
 * renders what comes back.
 */

import {
  ApiClient,
  ConflictDetail,
  RegistrationSubmission,
  RegistrationTriple,
  SUBMISSION_FIELDS,
  SubmissionField,
  conflictField,
} from "./api.js";

const EMAIL_RE = /^[^\s@]+@[^\s@]+\.[^\s@]+$/;
const ISO_DATE_RE = /^\d{4}-\d{2}-\d{2}$/;

export type FieldState =
  | { kind: "untouched" }
  | { kind: "valid" }
  | { kind: "error"; message: string };

export interface FormModel {
  values: Record<SubmissionField, string>;
  states: Record<SubmissionField, FieldState>;
  pending: boolean;
}

export type ViewTransition =
  | { kind: "success"; triple: RegistrationTriple }
  | { kind: "conflict"; detail: ConflictDetail; field: SubmissionField | null }
  | { kind: "form_errors" }
  | { kind: "blocked" }
  | { kind: "network"; message: string };

export function emptyForm(): FormModel {
  const values = {} as Record<SubmissionField, string>;
  const states = {} as Record<SubmissionField, FieldState>;
  for (const field of SUBMISSION_FIELDS) {
    values[field] = "";
    states[field] = { kind: "untouched" };
  }
  return { values, states, pending: false };
}

/** Local rule for one field; null means valid. */
export function validateField(field: SubmissionField, value: string): string | null {
  const trimmed = value.trim();
  if (!trimmed) {
    return "required";
  }
  switch (field) {
    case "owner_email":
      return EMAIL_RE.test(trimmed) ? null : "must be an email address";
    case "car_model_year": {
      const year = Number(trimmed);
      if (!Number.isInteger(year)) {
        return "must be a whole year";
      }
      return year >= 1900 && year <= 2200 ? null : "must be between 1900 and 2200";
    }
    case "car_date_purchased": {
      if (!ISO_DATE_RE.test(trimmed)) {
        return "must be a date like 2021-03-04";
      }
      const parsed = new Date(`${trimmed}T00:00:00Z`);
      return Number.isNaN(parsed.getTime()) ? "must be a valid calendar date" : null;
    }
    default:
      return null;
  }
}

export function setField(form: FormModel, field: SubmissionField, value: string): FormModel {
  const message = validateField(field, value);
  return {
    ...form,
    values: { ...form.values, [field]: value },
    states: {
      ...form.states,
      [field]: message === null ? { kind: "valid" } : { kind: "error", message },
    },
  };
}

/** Re-validate everything, turning untouched fields into explicit states. */
export function touchAll(form: FormModel): FormModel {
  let next = form;
  for (const field of SUBMISSION_FIELDS) {
    next = setField(next, field, next.values[field]);
  }
  return next;
}

export function isLocallyValid(form: FormModel): boolean {
  return SUBMISSION_FIELDS.every(
    (field) => validateField(field, form.values[field]) === null,
  );
}

/** Submit stays disabled until every field is valid and nothing is in flight. */
export function canSubmit(form: FormModel): boolean {
  return !form.pending && isLocallyValid(form);
}

export function toSubmission(form: FormModel): RegistrationSubmission {
  const body = {} as Record<SubmissionField, string | number>;
  for (const field of SUBMISSION_FIELDS) {
    body[field] = form.values[field].trim();
  }
  body.car_model_year = Number(form.values.car_model_year.trim());
  return body as RegistrationSubmission;
}

/**
 * POST a locally-valid form. Server-side field errors land back on the
 * form states; key conflicts name the offending relation so the view
 * can highlight the right field.
 */
export async function submitRegistration(
  form: FormModel,
  client: ApiClient,
): Promise<{ form: FormModel; view: ViewTransition }> {
  const response = await client.createRegistration(toSubmission(form));
  switch (response.kind) {
    case "created":
      return { form: emptyForm(), view: { kind: "success", triple: response.triple } };
    case "conflict": {
      const field = conflictField(response.detail.relation);
      let next = form;
      if (field !== null) {
        next = {
          ...form,
          states: {
            ...form.states,
            [field]: { kind: "error", message: response.detail.reason },
          },
        };
      }
      return { form: next, view: { kind: "conflict", detail: response.detail, field } };
    }
    case "invalid": {
      let next = form;
      for (const [field, message] of Object.entries(response.errors)) {
        if ((SUBMISSION_FIELDS as readonly string[]).includes(field)) {
          next = {
            ...next,
            states: {
              ...next.states,
              [field as SubmissionField]: { kind: "error", message: message ?? "invalid" },
            },
          };
        }
      }
      return { form: next, view: { kind: "form_errors" } };
    }
    case "network":
      return { form, view: { kind: "network", message: response.message } };
  }
}

/**
 * The submit-button path: blocks locally-invalid forms (marking every
 * field) without sending anything, and refuses reentrant submits.
 */
export async function attemptSubmit(
  form: FormModel,
  client: ApiClient,
): Promise<{ form: FormModel; view: ViewTransition }> {
  if (form.pending) {
    return { form, view: { kind: "blocked" } };
  }
  if (!isLocallyValid(form)) {
    return { form: touchAll(form), view: { kind: "blocked" } };
  }
  const result = await submitRegistration({ ...form, pending: true }, client);
  return { form: { ...result.form, pending: false }, view: result.view };
}
