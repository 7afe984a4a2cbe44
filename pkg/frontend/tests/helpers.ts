/** Shared fixtures for the form tests. */

import { SUBMISSION_FIELDS } from "../src/api.js";
import { FormModel, emptyForm, setField } from "../src/form.js";

export const VALID_VALUES: Record<string, string> = {
  owner_id: "o1",
  owner_name: "Ada Lovelace",
  owner_email: "ada@example.com",
  owner_phone: "+1-555-0001",
  car_id: "c1",
  car_model_name: "Volt S",
  car_model_year: "2021",
  car_date_purchased: "2021-03-04",
  station_id: "s1",
  station_name: "Main Street",
  station_address: "1 Main St",
};

export function filledForm(): FormModel {
  let form = emptyForm();
  for (const field of SUBMISSION_FIELDS) {
    form = setField(form, field, VALID_VALUES[field]);
  }
  return form;
}

export function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
