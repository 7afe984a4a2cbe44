/**
 * DOM wiring: the registration form and the read-only station view.
 * All state lives in the form model; this layer renders transitions.
 */

import { ApiClient, SUBMISSION_FIELDS, SubmissionField } from "./api.js";
import {
  FormModel,
  ViewTransition,
  canSubmit,
  emptyForm,
  setField,
  submitRegistration,
  touchAll,
} from "./form.js";
import { loadStationView, revenueOf } from "./station-view.js";

interface FieldSpec {
  field: SubmissionField;
  label: string;
  group: "Owner" | "Car" | "Station";
  placeholder?: string;
}

const FIELD_SPECS: FieldSpec[] = [
  { field: "owner_id", label: "Personal ID", group: "Owner" },
  { field: "owner_name", label: "Name", group: "Owner" },
  { field: "owner_email", label: "Email", group: "Owner" },
  { field: "owner_phone", label: "Phone", group: "Owner" },
  { field: "car_id", label: "Car ID", group: "Car" },
  { field: "car_model_name", label: "Model name", group: "Car" },
  { field: "car_model_year", label: "Model year", group: "Car", placeholder: "2021" },
  { field: "car_date_purchased", label: "Date purchased", group: "Car", placeholder: "2021-03-04" },
  { field: "station_id", label: "Station ID", group: "Station" },
  { field: "station_name", label: "Station name", group: "Station" },
  { field: "station_address", label: "Station address", group: "Station" },
];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text) {
    node.textContent = text;
  }
  return node;
}

export function initRegistrationForm(root: HTMLElement, client: ApiClient): void {
  let form: FormModel = emptyForm();

  const formEl = el("form", { class: "registration-form", novalidate: "" });
  const banner = el("p", { class: "banner", hidden: "" });
  const inputs = new Map<SubmissionField, HTMLInputElement>();
  const errors = new Map<SubmissionField, HTMLElement>();

  for (const group of ["Owner", "Car", "Station"] as const) {
    const fieldset = el("fieldset");
    fieldset.append(el("legend", {}, group));
    for (const spec of FIELD_SPECS.filter((s) => s.group === group)) {
      const wrapper = el("label", { class: "field" });
      wrapper.append(el("span", {}, spec.label));
      const input = el("input", {
        name: spec.field,
        "data-field": spec.field,
        placeholder: spec.placeholder ?? "",
      });
      const error = el("small", { class: "field-error", "data-error-for": spec.field });
      wrapper.append(input, error);
      fieldset.append(wrapper);
      inputs.set(spec.field, input);
      errors.set(spec.field, error);
    }
    formEl.append(fieldset);
  }

  const submit = el("button", { type: "submit", class: "submit" }, "Register");
  formEl.append(submit, banner);
  root.append(formEl);

  function refresh(): void {
    for (const field of SUBMISSION_FIELDS) {
      const state = form.states[field];
      const input = inputs.get(field)!;
      const error = errors.get(field)!;
      if (input.value !== form.values[field]) {
        input.value = form.values[field];
      }
      error.textContent = state.kind === "error" ? state.message : "";
      input.classList.toggle("invalid", state.kind === "error");
    }
    submit.disabled = !canSubmit(form);
    submit.textContent = form.pending ? "Registering..." : "Register";
  }

  function showView(view: ViewTransition): void {
    banner.hidden = false;
    banner.className = "banner";
    switch (view.kind) {
      case "success": {
        banner.classList.add("success");
        banner.textContent =
          `Registered: car ${view.triple.car_id} (owner ${view.triple.car_owner_id}) ` +
          `at station ${view.triple.station_id}`;
        break;
      }
      case "conflict": {
        banner.classList.add("error");
        banner.textContent = view.field
          ? `Already taken: ${view.detail.relation} key ${view.detail.key} exists with ` +
            "different details. Enter a valid/unique key."
          : `Already registered: ${view.detail.key}`;
        break;
      }
      case "form_errors":
        banner.classList.add("error");
        banner.textContent = "Some fields were rejected by the server; see below.";
        break;
      case "network":
        banner.classList.add("error");
        banner.textContent = `Could not reach the registry (${view.message}). ` +
          "Your input is kept; try again.";
        break;
      case "blocked":
        banner.hidden = true;
        break;
    }
  }

  formEl.addEventListener("input", (event) => {
    const target = event.target as HTMLInputElement;
    const field = target.getAttribute("data-field") as SubmissionField | null;
    if (field) {
      form = setField(form, field, target.value);
      refresh();
    }
  });

  formEl.addEventListener("submit", (event) => {
    event.preventDefault();
    if (!canSubmit(form)) {
      // Locally invalid (or already in flight): surface the field
      // errors, send nothing.
      form = touchAll(form);
      refresh();
      return;
    }
    form = { ...form, pending: true };
    refresh();
    void submitRegistration(form, client).then((result) => {
      form = { ...result.form, pending: false };
      refresh();
      showView(result.view);
    });
  });

  refresh();
}

export function initStationView(root: HTMLElement, client: ApiClient): void {
  const section = el("div", { class: "station-view" });
  const picker = el("select", { class: "station-picker" });
  const reload = el("button", { type: "button", class: "reload" }, "Refresh");
  const content = el("div", { class: "station-content" },
                     "No stations yet. Register a car first.");
  section.append(picker, reload, content);
  root.append(section);

  async function renderStation(stationId: string): Promise<void> {
    const data = await loadStationView(client, stationId);
    content.textContent = "";
    const title = data.station
      ? `${data.station.name} (${data.station.address})`
      : stationId;
    content.append(el("h3", {}, title));

    const regTable = el("table", { class: "registrations" });
    regTable.append(el("caption", {}, `Registrations (${data.registrations.length})`));
    const regHead = el("tr");
    regHead.append(el("th", {}, "Car"), el("th", {}, "Owner"));
    regTable.append(regHead);
    for (const row of data.registrations) {
      const tr = el("tr");
      tr.append(el("td", {}, row.car_id), el("td", {}, row.car_owner_id));
      regTable.append(tr);
    }
    content.append(regTable);

    const txTable = el("table", { class: "transactions" });
    txTable.append(el("caption", {},
                      `Transactions (${data.transactions.length}, ` +
                      `revenue ${revenueOf(data.transactions)})`));
    const txHead = el("tr");
    txHead.append(el("th", {}, "Car"), el("th", {}, "kWh"),
                  el("th", {}, "Rate"), el("th", {}, "Total"));
    txTable.append(txHead);
    for (const row of data.transactions) {
      const tr = el("tr");
      tr.append(el("td", {}, row.car_id), el("td", {}, row.kwh),
                el("td", {}, row.price_per_kwh), el("td", {}, row.total));
      txTable.append(tr);
    }
    content.append(txTable);
  }

  async function refreshStations(): Promise<void> {
    const stations = await client.stations();
    picker.textContent = "";
    for (const station of stations) {
      picker.append(el("option", { value: station.id }, `${station.id}: ${station.name}`));
    }
    if (stations.length === 0) {
      content.textContent = "No stations yet. Register a car first.";
      return;
    }
    await renderStation(picker.value || stations[0].id);
  }

  picker.addEventListener("change", () => void renderStation(picker.value));
  reload.addEventListener("click", () => void refreshStations());
  void refreshStations().catch(() => {
    content.textContent = "Could not reach the registry API.";
  });
}

export function initApp(root: HTMLElement, client: ApiClient): void {
  const formSection = el("section", { id: "register" });
  formSection.append(el("h2", {}, "Register a car at a station"));
  const viewSection = el("section", { id: "stations" });
  viewSection.append(el("h2", {}, "Stations"));
  root.append(formSection, viewSection);
  initRegistrationForm(formSection, client);
  initStationView(viewSection, client);
}
