// Optional peer dependency: present only when the user installs the real
// encoder runtime, so the module is typed as `any` here.
declare module "@huggingface/transformers";
