// Geometry probe: returns every rendered element with a positional XPath and
// its border-box rectangle in page coordinates. Parents precede children.
var SKIP = { HEAD: 1, SCRIPT: 1, STYLE: 1, LINK: 1, META: 1, TITLE: 1, NOSCRIPT: 1, TEMPLATE: 1 };
var elements = [];
var sx = window.scrollX || window.pageXOffset || 0;
var sy = window.scrollY || window.pageYOffset || 0;

function step(el) {
  var tag = el.tagName.toLowerCase();
  if (tag === 'html' || tag === 'body') return tag;
  var n = 1;
  for (var s = el.previousElementSibling; s; s = s.previousElementSibling) {
    if (s.tagName === el.tagName) n++;
  }
  return tag + '[' + n + ']';
}

function walk(el, path, parentIndex) {
  if (SKIP[el.tagName] || el.hasAttribute('data-redefix-overlay')) return;
  var style = window.getComputedStyle(el);
  if (style.display === 'none') return;
  var xpath = path + '/' + step(el);
  var r = el.getBoundingClientRect();
  var index = parentIndex;
  if (r.width > 0 && r.height > 0) {
    index = elements.length;
    elements.push({
      xpath: xpath,
      rect: { x: r.left + sx, y: r.top + sy, width: r.width, height: r.height },
      parent_index: parentIndex,
      visible: style.visibility !== 'hidden' && style.visibility !== 'collapse'
    });
  }
  for (var c = el.firstElementChild; c; c = c.nextElementSibling) {
    walk(c, xpath, index);
  }
}

walk(document.documentElement, '', -1);
return {
  elements: elements,
  viewport: { width: window.innerWidth, height: window.innerHeight }
};
