import { describe, expect, it, vi } from "vitest";

import { ApiClient, FetchLike, SUBMISSION_FIELDS } from "../src/api.js";
import {
  attemptSubmit,
  canSubmit,
  emptyForm,
  setField,
  submitRegistration,
  validateField,
} from "../src/form.js";

import { filledForm, jsonResponse } from "./helpers.js";

describe("field validation", () => {
  it("requires every field", () => {
    for (const field of SUBMISSION_FIELDS) {
      expect(validateField(field, "")).toBe("required");
      expect(validateField(field, "   ")).toBe("required");
    }
  });

  it("rejects malformed emails", () => {
    expect(validateField("owner_email", "not-an-email")).toMatch(/email/);
    expect(validateField("owner_email", "ada@example.com")).toBeNull();
  });

  it("bounds the model year", () => {
    expect(validateField("car_model_year", "1500")).toMatch(/1900/);
    expect(validateField("car_model_year", "soon")).toMatch(/year/);
    expect(validateField("car_model_year", "2021")).toBeNull();
  });

  it("wants an ISO date", () => {
    expect(validateField("car_date_purchased", "04/03/2021")).toMatch(/date/);
    expect(validateField("car_date_purchased", "2021-03-04")).toBeNull();
  });
});

describe("submit gating", () => {
  it("starts untouched and unsubmittable", () => {
    const form = emptyForm();
    expect(form.states.owner_id.kind).toBe("untouched");
    expect(canSubmit(form)).toBe(false);
  });

  it("enables only when every field is valid", () => {
    let form = filledForm();
    expect(canSubmit(form)).toBe(true);
    form = setField(form, "owner_email", "");
    expect(canSubmit(form)).toBe(false);
  });

  it("blocks locally without sending anything", async () => {
    const fetchSpy = vi.fn<FetchLike>();
    const client = new ApiClient("http://registry.test", fetchSpy);
    const form = setField(filledForm(), "owner_email", "");

    const { form: after, view } = await attemptSubmit(form, client);

    expect(view).toEqual({ kind: "blocked" });
    expect(fetchSpy).not.toHaveBeenCalled();
    expect(after.states.owner_email).toEqual({ kind: "error", message: "required" });
  });

  it("refuses a submit while one is in flight", async () => {
    const fetchSpy = vi.fn<FetchLike>();
    const client = new ApiClient("http://registry.test", fetchSpy);
    const { view } = await attemptSubmit({ ...filledForm(), pending: true }, client);
    expect(view).toEqual({ kind: "blocked" });
    expect(fetchSpy).not.toHaveBeenCalled();
  });
});

describe("server responses", () => {
  it("201 clears the form and reports the triple", async () => {
    const client = new ApiClient("http://registry.test", async () =>
      jsonResponse(201, { station_id: "s1", car_id: "c1", car_owner_id: "o1" }));
    const { form, view } = await submitRegistration(filledForm(), client);
    expect(view).toEqual({
      kind: "success",
      triple: { station_id: "s1", car_id: "c1", car_owner_id: "o1" },
    });
    expect(form.values.owner_id).toBe("");
  });

  it("409 lands on the conflicting field", async () => {
    const detail = { relation: "car", key: "c1", reason: "car key exists" };
    const client = new ApiClient("http://registry.test", async () =>
      jsonResponse(409, detail));
    const { form, view } = await submitRegistration(filledForm(), client);
    expect(view).toEqual({ kind: "conflict", detail, field: "car_id" });
    expect(form.states.car_id).toEqual({ kind: "error", message: "car key exists" });
  });

  it("409 on the whole triple stays a banner", async () => {
    const detail = { relation: "registration", key: "(s1, c1, o1)", reason: "dup" };
    const client = new ApiClient("http://registry.test", async () =>
      jsonResponse(409, detail));
    const { view } = await submitRegistration(filledForm(), client);
    expect(view).toEqual({ kind: "conflict", detail, field: null });
  });

  it("422 maps field messages onto the form", async () => {
    const client = new ApiClient("http://registry.test", async () =>
      jsonResponse(422, { car_model_year: "out of range" }));
    const { form, view } = await submitRegistration(filledForm(), client);
    expect(view).toEqual({ kind: "form_errors" });
    expect(form.states.car_model_year).toEqual({
      kind: "error",
      message: "out of range",
    });
  });

  it("network failure keeps the input and asks to retry", async () => {
    const client = new ApiClient("http://registry.test", async () => {
      throw new TypeError("fetch failed");
    });
    const before = filledForm();
    const { form, view } = await submitRegistration(before, client);
    expect(view.kind).toBe("network");
    expect(form.values).toEqual(before.values);
  });
});
